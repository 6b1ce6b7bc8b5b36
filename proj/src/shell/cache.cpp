#include "decoysh/shell/cache.hpp"

#include <fstream>
#include <sstream>
#include <utility>
#include <vector>

#include "decoysh/shell/builtins.hpp"

namespace decoysh::shell {

namespace {

constexpr std::string_view kHeader = "# decoysh command cache v1";

constexpr std::string_view kFreeH =
    R"~(              total        used        free      shared  buff/cache   available
Mem:          3.8Gi       1.1Gi       403Mi       1.0Mi       2.3Gi       2.6Gi
Swap:         2.0Gi          0B       2.0Gi
)~";

constexpr std::string_view kFreeM =
    R"~(              total        used        free      shared  buff/cache   available
Mem:           3935        1130         403           1        2401        2652
Swap:          2047           0        2047
)~";

constexpr std::string_view kDfH =
    R"~(Filesystem      Size  Used Avail Use% Mounted on
udev            1.9G     0  1.9G   0% /dev
tmpfs           394M  1.1M  393M   1% /run
/dev/sda2        39G  8.7G   28G  24% /
tmpfs           2.0G     0  2.0G   0% /dev/shm
tmpfs           5.0M     0  5.0M   0% /run/lock
tmpfs           2.0G     0  2.0G   0% /sys/fs/cgroup
/dev/sda1       511M  5.3M  506M   2% /boot/efi
tmpfs           394M     0  394M   0% /run/user/0
)~";

constexpr std::string_view kW =
    R"~( 09:14:22 up 14 days,  3:02,  1 user,  load average: 0.08, 0.03, 0.01
USER     TTY      FROM             LOGIN@   IDLE   JCPU   PCPU WHAT
{user}     pts/0    10.0.12.5        09:12    0.00s  0.02s  0.00s w
)~";

constexpr std::string_view kWho = "{user}     pts/0        2023-10-01 09:12 (10.0.12.5)\n";

constexpr std::string_view kUptime =
    " 09:14:22 up 14 days,  3:02,  1 user,  load average: 0.08, 0.03, 0.01\n";

constexpr std::string_view kPsAux =
    R"~(USER         PID %CPU %MEM    VSZ   RSS TTY      STAT START   TIME COMMAND
root           1  0.0  0.2 167724 11532 ?        Ss   Sep17   0:21 /sbin/init
root           2  0.0  0.0      0     0 ?        S    Sep17   0:00 [kthreadd]
root           3  0.0  0.0      0     0 ?        I<   Sep17   0:00 [rcu_gp]
root         412  0.0  0.4  68472 17440 ?        S<s  Sep17   0:09 /lib/systemd/systemd-journald
root         447  0.0  0.1  21712  5312 ?        Ss   Sep17   0:02 /lib/systemd/systemd-udevd
systemd+     588  0.0  0.1  24060 12260 ?        Ss   Sep17   0:04 /lib/systemd/systemd-resolved
root         697  0.0  0.0   6816  2880 ?        Ss   Sep17   0:01 /usr/sbin/cron -f
message+     699  0.0  0.1   7596  4588 ?        Ss   Sep17   0:03 /usr/bin/dbus-daemon --system --address=systemd: --nofork --nopidfile --systemd-activation --syslog-only
syslog       708  0.0  0.1 224344  5028 ?        Ssl  Sep17   0:05 /usr/sbin/rsyslogd -n -iNONE
root         712  0.0  0.1  16948  7612 ?        Ss   Sep17   0:02 /lib/systemd/systemd-logind
root         781  0.0  0.0   5828  1836 tty1     Ss+  Sep17   0:00 /sbin/agetty -o -p -- \u --noclear tty1 linux
root         802  0.0  0.1  12176  7340 ?        Ss   Sep17   0:00 sshd: /usr/sbin/sshd -D [listener] 0 of 10-100 startups
www-data     911  0.0  0.1  55424  5744 ?        S    Sep17   0:00 nginx: worker process
root         910  0.0  0.0  55084  1584 ?        Ss   Sep17   0:00 nginx: master process /usr/sbin/nginx -g daemon on; master_process on;
mysql        934  0.2  9.8 1764044 396252 ?      Ssl  Sep17  41:07 /usr/sbin/mysqld
root        1507  0.0  0.2  13932  8996 ?        Ss   09:12   0:00 sshd: {user}@pts/0
{user}        1609  0.0  0.1  10032  5128 pts/0    Ss   09:12   0:00 -bash
{user}        1644  0.0  0.0  10616  3340 pts/0    R+   09:14   0:00 ps aux
)~";

constexpr std::string_view kPsEf =
    R"~(UID          PID    PPID  C STIME TTY          TIME CMD
root           1       0  0 Sep17 ?        00:00:21 /sbin/init
root           2       0  0 Sep17 ?        00:00:00 [kthreadd]
root         412       1  0 Sep17 ?        00:00:09 /lib/systemd/systemd-journald
systemd+     588       1  0 Sep17 ?        00:00:04 /lib/systemd/systemd-resolved
root         697       1  0 Sep17 ?        00:00:01 /usr/sbin/cron -f
syslog       708       1  0 Sep17 ?        00:00:05 /usr/sbin/rsyslogd -n -iNONE
root         802       1  0 Sep17 ?        00:00:00 sshd: /usr/sbin/sshd -D [listener] 0 of 10-100 startups
root         910       1  0 Sep17 ?        00:00:00 nginx: master process /usr/sbin/nginx -g daemon on; master_process on;
mysql        934       1  0 Sep17 ?        00:41:07 /usr/sbin/mysqld
root        1507     802  0 09:12 ?        00:00:00 sshd: {user}@pts/0
{user}        1609    1507  0 09:12 pts/0    00:00:00 -bash
{user}        1645    1609  0 09:14 pts/0    00:00:00 ps -ef
)~";

constexpr std::string_view kNetstat =
    R"~(Active Internet connections (only servers)
Proto Recv-Q Send-Q Local Address           Foreign Address         State       PID/Program name
tcp        0      0 127.0.0.53:53           0.0.0.0:*               LISTEN      588/systemd-resolve
tcp        0      0 0.0.0.0:22              0.0.0.0:*               LISTEN      802/sshd: /usr/sbin
tcp        0      0 0.0.0.0:80              0.0.0.0:*               LISTEN      910/nginx: master p
tcp        0      0 127.0.0.1:3306          0.0.0.0:*               LISTEN      934/mysqld
tcp6       0      0 :::22                   :::*                    LISTEN      802/sshd: /usr/sbin
tcp6       0      0 :::80                   :::*                    LISTEN      910/nginx: master p
udp        0      0 127.0.0.53:53           0.0.0.0:*                           588/systemd-resolve
)~";

constexpr std::string_view kSs =
    R"~(Netid State  Recv-Q Send-Q  Local Address:Port   Peer Address:Port Process
udp   UNCONN 0      0       127.0.0.53%lo:53          0.0.0.0:*     users:(("systemd-resolve",pid=588,fd=12))
tcp   LISTEN 0      4096    127.0.0.53%lo:53          0.0.0.0:*     users:(("systemd-resolve",pid=588,fd=13))
tcp   LISTEN 0      128           0.0.0.0:22          0.0.0.0:*     users:(("sshd",pid=802,fd=3))
tcp   LISTEN 0      511           0.0.0.0:80          0.0.0.0:*     users:(("nginx",pid=911,fd=6),("nginx",pid=910,fd=6))
tcp   LISTEN 0      70          127.0.0.1:3306        0.0.0.0:*     users:(("mysqld",pid=934,fd=23))
tcp   LISTEN 0      128              [::]:22             [::]:*     users:(("sshd",pid=802,fd=4))
tcp   LISTEN 0      511              [::]:80             [::]:*     users:(("nginx",pid=911,fd=7),("nginx",pid=910,fd=7))
)~";

constexpr std::string_view kIfconfig =
    R"~(eth0: flags=4163<UP,BROADCAST,RUNNING,MULTICAST>  mtu 1500
        inet 10.0.12.34  netmask 255.255.255.0  broadcast 10.0.12.255
        inet6 fe80::216:3eff:fe4a:9c21  prefixlen 64  scopeid 0x20<link>
        ether 00:16:3e:4a:9c:21  txqueuelen 1000  (Ethernet)
        RX packets 4021783  bytes 1288371022 (1.2 GB)
        RX errors 0  dropped 0  overruns 0  frame 0
        TX packets 2873310  bytes 611029377 (611.0 MB)
        TX errors 0  dropped 0 overruns 0  carrier 0  collisions 0

lo: flags=73<UP,LOOPBACK,RUNNING>  mtu 65536
        inet 127.0.0.1  netmask 255.0.0.0
        inet6 ::1  prefixlen 128  scopeid 0x10<host>
        loop  txqueuelen 1000  (Local Loopback)
        RX packets 185224  bytes 17611048 (17.6 MB)
        RX errors 0  dropped 0  overruns 0  frame 0
        TX packets 185224  bytes 17611048 (17.6 MB)
        TX errors 0  dropped 0 overruns 0  carrier 0  collisions 0

)~";

constexpr std::string_view kIpAddr =
    R"~(1: lo: <LOOPBACK,UP,LOWER_UP> mtu 65536 qdisc noqueue state UNKNOWN group default qlen 1000
    link/loopback 00:00:00:00:00:00 brd 00:00:00:00:00:00
    inet 127.0.0.1/8 scope host lo
       valid_lft forever preferred_lft forever
    inet6 ::1/128 scope host
       valid_lft forever preferred_lft forever
2: eth0: <BROADCAST,MULTICAST,UP,LOWER_UP> mtu 1500 qdisc mq state UP group default qlen 1000
    link/ether 00:16:3e:4a:9c:21 brd ff:ff:ff:ff:ff:ff
    inet 10.0.12.34/24 brd 10.0.12.255 scope global dynamic eth0
       valid_lft 71342sec preferred_lft 71342sec
    inet6 fe80::216:3eff:fe4a:9c21/64 scope link
       valid_lft forever preferred_lft forever
)~";

constexpr std::string_view kIpRoute =
    R"~(default via 10.0.12.1 dev eth0 proto dhcp src 10.0.12.34 metric 100
10.0.12.0/24 dev eth0 proto kernel scope link src 10.0.12.34
10.0.12.1 dev eth0 proto dhcp scope link src 10.0.12.34 metric 100
)~";

constexpr std::string_view kLsbRelease =
    R"~(No LSB modules are available.
Distributor ID:	Ubuntu
Description:	Ubuntu 20.04.6 LTS
Release:	20.04
Codename:	focal
)~";

constexpr std::string_view kLast =
    R"~({user}     pts/0        10.0.12.5        Sun Oct  1 09:12   still logged in
ubuntu   pts/0        10.0.12.5        Sun Oct  1 08:59 - 09:04  (00:05)
ubuntu   pts/1        10.0.12.5        Fri Sep 29 16:20 - 17:48  (01:28)
reboot   system boot  5.15.0-78-generic Sun Sep 17 06:12   still running

wtmp begins Sun Sep 17 06:12:03 2023
)~";

constexpr std::string_view kSudoL =
    R"~(Matching Defaults entries for {user} on {hostname}:
    env_reset, mail_badpass, secure_path=/usr/local/sbin\:/usr/local/bin\:/usr/sbin\:/usr/bin\:/sbin\:/bin\:/snap/bin

User {user} may run the following commands on {hostname}:
    (ALL : ALL) ALL
)~";

constexpr std::string_view kLscpu =
    R"~(Architecture:                    x86_64
CPU op-mode(s):                  32-bit, 64-bit
Byte Order:                      Little Endian
Address sizes:                   46 bits physical, 48 bits virtual
CPU(s):                          2
On-line CPU(s) list:             0,1
Thread(s) per core:              1
Core(s) per socket:              2
Socket(s):                       1
NUMA node(s):                    1
Vendor ID:                       GenuineIntel
CPU family:                      6
Model:                           85
Model name:                      Intel(R) Xeon(R) Gold 6148 CPU @ 2.40GHz
Stepping:                        4
CPU MHz:                         2399.998
BogoMIPS:                        4799.99
Hypervisor vendor:               KVM
Virtualization type:             full
L1d cache:                       64 KiB
L1i cache:                       64 KiB
L2 cache:                        2 MiB
L3 cache:                        27.5 MiB
NUMA node0 CPU(s):               0,1
)~";

constexpr std::string_view kLsblk =
    R"~(NAME   MAJ:MIN RM  SIZE RO TYPE MOUNTPOINT
loop0    7:0    0 63.5M  1 loop /snap/core20/2015
loop1    7:1    0 40.9M  1 loop /snap/snapd/20092
sda      8:0    0   40G  0 disk
├─sda1   8:1    0  512M  0 part /boot/efi
└─sda2   8:2    0 39.5G  0 part /
sr0     11:0    1 1024M  0 rom
)~";

DictionaryCache build_default() {
  DictionaryCache c;
  auto add = [&](std::string key, std::string_view value) {
    c.entries.emplace(std::move(key), std::string(value));
  };
  add("uname -a", kernel_banner("{hostname}") + "\n");
  add("uname -r", "5.15.0-78-generic\n");
  add("free -h", kFreeH);
  add("free -m", kFreeM);
  add("df -h", kDfH);
  add("w", kW);
  add("who", kWho);
  add("uptime", kUptime);
  add("ps aux", kPsAux);
  add("ps -ef", kPsEf);
  add("netstat -tulpn", kNetstat);
  add("ss -tulpn", kSs);
  add("ifconfig", kIfconfig);
  add("ip a", kIpAddr);
  add("ip addr", kIpAddr);
  add("ip route", kIpRoute);
  add("lsb_release -a", kLsbRelease);
  add("nproc", "2\n");
  add("arch", "x86_64\n");
  add("last", kLast);
  add("crontab -l", "no crontab for {user}\n");
  add("sudo -l", kSudoL);
  add("lscpu", kLscpu);
  add("lsblk", kLsblk);
  add("getconf LONG_BIT", "64\n");
  return c;
}

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\\': out += "\\\\"; break;
      default: out += c;
    }
  }
  return out;
}

std::string unescape(std::string_view s, std::size_t line) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out += s[i];
      continue;
    }
    if (++i >= s.size()) throw CacheError("dangling backslash", line);
    switch (s[i]) {
      case 'n': out += '\n'; break;
      case 't': out += '\t'; break;
      case '\\': out += '\\'; break;
      default: throw CacheError(std::string("unknown escape \\") + s[i], line);
    }
  }
  return out;
}

}  // namespace

std::string normalize_command(std::string_view raw) {
  std::string out;
  bool pending_space = false;
  for (char c : raw) {
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += c;
  }
  return out;
}

std::string render_template(std::string_view tmpl, const VfsState& state) {
  static const std::vector<std::pair<std::string_view, std::string VfsState::*>> vars = {
      {"{user}", &VfsState::user}, {"{hostname}", &VfsState::hostname}, {"{cwd}", &VfsState::cwd}};
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool matched = false;
    if (tmpl[i] == '{') {
      for (const auto& [name, member] : vars) {
        if (tmpl.compare(i, name.size(), name) == 0) {
          out += state.*member;
          i += name.size();
          matched = true;
          break;
        }
      }
    }
    if (!matched) out += tmpl[i++];
  }
  return out;
}

std::optional<std::string> lookup_cache(const DictionaryCache& cache, const VfsState& state,
                                        std::string_view raw) {
  auto it = cache.entries.find(normalize_command(raw));
  if (it == cache.entries.end()) return std::nullopt;
  return render_template(it->second, state);
}

const DictionaryCache& default_cache() {
  static const DictionaryCache cache = build_default();
  return cache;
}

DictionaryCache parse_cache(std::string_view text) {
  DictionaryCache cache;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool saw_header = false;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? nl : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line_no == 1) {
      if (line != kHeader) throw CacheError("missing cache header", 1);
      saw_header = true;
      continue;
    }
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) throw CacheError("record without tab separator", line_no);
    const std::string key = normalize_command(line.substr(0, tab));
    if (key.empty()) throw CacheError("empty command key", line_no);
    if (key != line.substr(0, tab)) throw CacheError("command key is not normalised", line_no);
    if (!cache.entries.emplace(key, unescape(line.substr(tab + 1), line_no)).second) {
      throw CacheError("duplicate command key '" + key + "'", line_no);
    }
  }
  if (!saw_header) throw CacheError("missing cache header", 1);
  return cache;
}

DictionaryCache load_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CacheError("cannot read cache file " + path.string(), 0);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_cache(buf.str());
}

std::string serialize_cache(const DictionaryCache& cache) {
  std::string out(kHeader);
  out += '\n';
  for (const auto& [key, value] : cache.entries) out += key + "\t" + escape(value) + "\n";
  return out;
}

}  // namespace decoysh::shell
