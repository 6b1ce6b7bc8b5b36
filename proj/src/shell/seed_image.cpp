#include "decoysh/shell/seed_image.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <string_view>
#include <vector>

namespace decoysh::shell {

namespace {

constexpr std::int64_t kInstallTime = 1689588000;  // Jul 17 2023 10:00 UTC
constexpr std::int64_t kConfigTime = 1690876800;   // Aug  1 2023 08:00 UTC
constexpr std::int64_t kRecentTime = 1696151100;   // Oct  1 2023 09:05 UTC

constexpr std::string_view kPasswd =
    R"~(root:x:0:0:root:/root:/bin/bash
daemon:x:1:1:daemon:/usr/sbin:/usr/sbin/nologin
bin:x:2:2:bin:/bin:/usr/sbin/nologin
sys:x:3:3:sys:/dev:/usr/sbin/nologin
sync:x:4:65534:sync:/bin:/bin/sync
games:x:5:60:games:/usr/games:/usr/sbin/nologin
man:x:6:12:man:/var/cache/man:/usr/sbin/nologin
lp:x:7:7:lp:/var/spool/lpd:/usr/sbin/nologin
mail:x:8:8:mail:/var/mail:/usr/sbin/nologin
news:x:9:9:news:/var/spool/news:/usr/sbin/nologin
uucp:x:10:10:uucp:/var/spool/uucp:/usr/sbin/nologin
proxy:x:13:13:proxy:/bin:/usr/sbin/nologin
www-data:x:33:33:www-data:/var/www:/usr/sbin/nologin
backup:x:34:34:backup:/var/backups:/usr/sbin/nologin
list:x:38:38:Mailing List Manager:/var/list:/usr/sbin/nologin
irc:x:39:39:ircd:/var/run/ircd:/usr/sbin/nologin
gnats:x:41:41:Gnats Bug-Reporting System (admin):/var/lib/gnats:/usr/sbin/nologin
nobody:x:65534:65534:nobody:/nonexistent:/usr/sbin/nologin
systemd-network:x:100:102:systemd Network Management,,,:/run/systemd:/usr/sbin/nologin
systemd-resolve:x:101:103:systemd Resolver,,,:/run/systemd:/usr/sbin/nologin
systemd-timesync:x:102:104:systemd Time Synchronization,,,:/run/systemd:/usr/sbin/nologin
messagebus:x:103:106::/nonexistent:/usr/sbin/nologin
syslog:x:104:110::/home/syslog:/usr/sbin/nologin
_apt:x:105:65534::/nonexistent:/usr/sbin/nologin
tss:x:106:111:TPM software stack,,,:/var/lib/tpm:/bin/false
uuidd:x:107:112::/run/uuidd:/usr/sbin/nologin
tcpdump:x:108:113::/nonexistent:/usr/sbin/nologin
sshd:x:109:65534::/run/sshd:/usr/sbin/nologin
landscape:x:110:115::/var/lib/landscape:/usr/sbin/nologin
pollinate:x:111:1::/var/cache/pollinate:/bin/false
ubuntu:x:1000:1000:Ubuntu:/home/ubuntu:/bin/bash
admin:x:1001:1001:,,,:/home/admin:/bin/bash
)~";

constexpr std::string_view kGroup =
    R"~(root:x:0:
daemon:x:1:
bin:x:2:
sys:x:3:
adm:x:4:syslog,ubuntu
tty:x:5:
disk:x:6:
lp:x:7:
mail:x:8:
news:x:9:
uucp:x:10:
man:x:12:
proxy:x:13:
sudo:x:27:ubuntu,admin
www-data:x:33:
backup:x:34:
users:x:100:
nogroup:x:65534:
systemd-journal:x:101:
ssh:x:114:
ubuntu:x:1000:
admin:x:1001:
)~";

constexpr std::string_view kShadow =
    R"~(root:$6$Jq1dS9lP$uC8m2JxF0e7wq3lqv5n0m4Xn1pG7bQ0sYl8tK2Vw9ZcR3fH6aD5eU1oI4yT7rE2wQ9sA8dF6gH3jK0lZ1xC2vB.:19555:0:99999:7:::
daemon:*:19555:0:99999:7:::
bin:*:19555:0:99999:7:::
sys:*:19555:0:99999:7:::
sshd:*:19555:0:99999:7:::
ubuntu:$6$Xo2vR7nB$3kP9qL1mZ8wT5yH2cV6bN4jF7gD0sA9eR1uI3oP5lK8mJ2hG6fD4sA7qW0eR9tY3uI6oP1lK5jH8gF2dS4aZ0x.:19555:0:99999:7:::
admin:$6$Kd8sT1wQ$9mN2bV5cX8zL1kJ4hG7fD0sA3qW6eR9tY2uI5oP8lK1jH4gF7dS0aZ3xC6vB9nM2qW5eR8tY1uI4oP7lK0jH3g.:19570:0:99999:7:::
)~";

constexpr std::string_view kOsRelease =
    R"~(NAME="Ubuntu"
VERSION="20.04.6 LTS (Focal Fossa)"
ID=ubuntu
ID_LIKE=debian
PRETTY_NAME="Ubuntu 20.04.6 LTS"
VERSION_ID="20.04"
HOME_URL="https://www.ubuntu.com/"
SUPPORT_URL="https://help.ubuntu.com/"
BUG_REPORT_URL="https://bugs.launchpad.net/ubuntu/"
PRIVACY_POLICY_URL="https://www.ubuntu.com/legal/terms-and-policies/privacy-policy"
VERSION_CODENAME=focal
UBUNTU_CODENAME=focal
)~";

constexpr std::string_view kLsbRelease =
    R"~(DISTRIB_ID=Ubuntu
DISTRIB_RELEASE=20.04
DISTRIB_CODENAME=focal
DISTRIB_DESCRIPTION="Ubuntu 20.04.6 LTS"
)~";

constexpr std::string_view kHosts =
    R"~(127.0.0.1 localhost
127.0.1.1 svr04

# The following lines are desirable for IPv6 capable hosts
::1     ip6-localhost ip6-loopback
fe00::0 ip6-localnet
ff00::0 ip6-mcastprefix
ff02::1 ip6-allnodes
ff02::2 ip6-allrouters
)~";

constexpr std::string_view kResolv =
    R"~(# This file is managed by man:systemd-resolved(8). Do not edit.
#
# This is a dynamic resolv.conf file for connecting local clients to the
# internal DNS stub resolver of systemd-resolved.

nameserver 127.0.0.53
options edns0 trust-ad
search localdomain
)~";

constexpr std::string_view kFstab =
    R"~(# /etc/fstab: static file system information.
UUID=3f1c2a9e-8d4b-4e51-9b7a-0c6d2e8f1a44 /               ext4    errors=remount-ro 0       1
UUID=A1B2-C3D4  /boot/efi       vfat    umask=0077      0       1
/swap.img       none    swap    sw      0       0
)~";

constexpr std::string_view kCrontab =
    R"~(# /etc/crontab: system-wide crontab
# Unlike any other crontab you don't have to run the `crontab'
# command to install the new version when you edit this file
# and files in /etc/cron.d. These files also have username fields,
# that none of the other crontabs do.

SHELL=/bin/sh
PATH=/usr/local/sbin:/usr/local/bin:/sbin:/bin:/usr/sbin:/usr/bin

# Example of job definition:
# .---------------- minute (0 - 59)
# |  .------------- hour (0 - 23)
# |  |  .---------- day of month (1 - 31)
# |  |  |  .------- month (1 - 12) OR jan,feb,mar,apr ...
# |  |  |  |  .---- day of week (0 - 6) (Sunday=0 or 7) OR sun,mon,tue,wed,thu,fri,sat
# |  |  |  |  |
# *  *  *  *  * user-name command to be executed
17 *	* * *	root    cd / && run-parts --report /etc/cron.hourly
25 6	* * *	root	test -x /usr/sbin/anacron || ( cd / && run-parts --report /etc/cron.daily )
47 6	* * 7	root	test -x /usr/sbin/anacron || ( cd / && run-parts --report /etc/cron.weekly )
52 6	1 * *	root	test -x /usr/sbin/anacron || ( cd / && run-parts --report /etc/cron.monthly )
#
)~";

constexpr std::string_view kShells =
    R"~(# /etc/shells: valid login shells
/bin/sh
/bin/bash
/usr/bin/bash
/bin/rbash
/usr/bin/rbash
/bin/dash
/usr/bin/dash
)~";

constexpr std::string_view kSshdConfig =
    R"~(Include /etc/ssh/sshd_config.d/*.conf

#Port 22
#AddressFamily any
#ListenAddress 0.0.0.0

#PermitRootLogin prohibit-password
#PubkeyAuthentication yes

PasswordAuthentication yes
ChallengeResponseAuthentication no
UsePAM yes
X11Forwarding yes
PrintMotd no
AcceptEnv LANG LC_*
Subsystem	sftp	/usr/lib/openssh/sftp-server
)~";

constexpr std::string_view kProcVersion =
    "Linux version 5.15.0-78-generic (buildd@lcy02-amd64-008) (gcc (Ubuntu 9.4.0-1ubuntu1~20.04.1) "
    "9.4.0, GNU ld (GNU Binutils for Ubuntu) 2.34) #85-Ubuntu SMP Fri Jul 7 15:25:09 UTC 2023\n";

constexpr std::string_view kCpuInfoCore =
    R"~(vendor_id	: GenuineIntel
cpu family	: 6
model		: 85
model name	: Intel(R) Xeon(R) Gold 6148 CPU @ 2.40GHz
stepping	: 4
microcode	: 0x2006e05
cpu MHz		: 2399.998
cache size	: 28160 KB
physical id	: 0
siblings	: 2
cpu cores	: 2
fpu		: yes
fpu_exception	: yes
cpuid level	: 22
wp		: yes
flags		: fpu vme de pse tsc msr pae mce cx8 apic sep mtrr pge mca cmov pat pse36 clflush mmx fxsr sse sse2 ss ht syscall nx pdpe1gb rdtscp lm constant_tsc rep_good nopl xtopology nonstop_tsc cpuid tsc_known_freq pni pclmulqdq ssse3 fma cx16 pcid sse4_1 sse4_2 x2apic movbe popcnt aes xsave avx f16c rdrand hypervisor lahf_lm abm 3dnowprefetch avx2 smep bmi2 erms invpcid avx512f avx512dq rdseed adx smap clflushopt clwb avx512cd avx512bw avx512vl xsaveopt xsavec xgetbv1 xsaves arat pku ospke
bogomips	: 4799.99
clflush size	: 64
cache_alignment	: 64
address sizes	: 46 bits physical, 48 bits virtual
power management:
)~";

constexpr std::string_view kMemInfo =
    R"~(MemTotal:        4030252 kB
MemFree:          412860 kB
MemAvailable:    2716436 kB
Buffers:          118232 kB
Cached:          2262504 kB
SwapCached:            0 kB
Active:          1407300 kB
Inactive:        1790172 kB
SwapTotal:       2097148 kB
SwapFree:        2097148 kB
Dirty:               196 kB
Shmem:              1524 kB
)~";

constexpr std::string_view kAuthLog =
    R"~(Oct  1 08:59:12 svr04 sshd[1422]: Accepted publickey for ubuntu from 10.0.12.5 port 51822 ssh2: RSA SHA256:q7m2X5bV9n1kL3jH8gF4dS6aZ0xC2vB7nM5qW1eR3tY
Oct  1 08:59:12 svr04 sshd[1422]: pam_unix(sshd:session): session opened for user ubuntu by (uid=0)
Oct  1 08:59:12 svr04 systemd-logind[712]: New session 41 of user ubuntu.
Oct  1 09:01:47 svr04 sudo:   ubuntu : TTY=pts/0 ; PWD=/home/ubuntu ; USER=root ; COMMAND=/usr/bin/apt update
Oct  1 09:01:47 svr04 sudo: pam_unix(sudo:session): session opened for user root by ubuntu(uid=0)
Oct  1 09:02:30 svr04 sudo: pam_unix(sudo:session): session closed for user root
Oct  1 09:04:55 svr04 sshd[1422]: pam_unix(sshd:session): session closed for user ubuntu
Oct  1 09:04:55 svr04 systemd-logind[712]: Session 41 logged out. Waiting for processes to exit.
)~";

constexpr std::string_view kSyslog =
    R"~(Oct  1 09:00:01 svr04 CRON[1511]: (root) CMD (command -v debian-sa1 > /dev/null && debian-sa1 1 1)
Oct  1 09:04:02 svr04 systemd[1]: Starting Daily apt download activities...
Oct  1 09:04:03 svr04 systemd[1]: apt-daily.service: Succeeded.
Oct  1 09:04:03 svr04 systemd[1]: Finished Daily apt download activities.
)~";

constexpr std::string_view kBashrc =
    R"~(# ~/.bashrc: executed by bash(1) for non-login shells.

# If not running interactively, don't do anything
[ -z "$PS1" ] && return

HISTCONTROL=ignoredups:ignorespace
HISTSIZE=1000
HISTFILESIZE=2000

shopt -s checkwinsize

alias ll='ls -alF'
alias la='ls -A'
alias l='ls -CF'
)~";

constexpr std::string_view kProfile =
    R"~(# ~/.profile: executed by Bourne-compatible login shells.

if [ "$BASH" ]; then
  if [ -f ~/.bashrc ]; then
    . ~/.bashrc
  fi
fi

mesg n 2> /dev/null || true
)~";

constexpr std::string_view kIndexHtml =
    R"~(<!DOCTYPE html>
<html>
<head><title>Welcome to nginx!</title></head>
<body>
<h1>Welcome to nginx!</h1>
<p>If you see this page, the nginx web server is successfully installed and
working. Further configuration is required.</p>
</body>
</html>
)~";

constexpr std::string_view kBackupScript =
    R"~(#!/bin/bash
# nightly database dump
DB_USER=backup
DB_PASS='Summer2023!'
mysqldump -u "$DB_USER" -p"$DB_PASS" --all-databases | gzip > /var/backups/db-$(date +%F).sql.gz
find /var/backups -name 'db-*.sql.gz' -mtime +14 -delete
)~";

constexpr std::string_view kElfStub = "\x7f" "ELF\x02\x01\x01";

const std::vector<std::string_view> kBinaries = {
    "apt", "apt-get", "awk", "bash", "cat", "chmod", "chown", "cp", "curl", "date", "df",
    "dpkg", "echo", "env", "find", "free", "grep", "gzip", "head", "hostname", "id", "ip",
    "kill", "less", "ln", "ls", "mkdir", "more", "mount", "mv", "nano", "netstat", "perl", "pwd",
    "ps", "python3", "rm", "scp", "sed", "sh", "ss", "ssh", "sudo", "systemctl", "tail",
    "tar", "top", "touch", "uname", "uptime", "vi", "vim", "w", "wc", "wget", "which",
    "whoami"};

const std::vector<std::string_view> kSbinaries = {"ifconfig", "iptables", "reboot", "shutdown",
                                                  "sshd", "useradd", "usermod"};

class ImageBuilder {
 public:
  ImageBuilder() { root_ = VfsNode::directory("", 0755, kInstallTime); }

  ImageBuilder& dir(std::string_view path, std::uint16_t mode = 0755,
                    std::int64_t mtime = kInstallTime, std::string_view owner = "root") {
    VfsNode& parent = parent_of(path);
    VfsNode d = VfsNode::directory(base_name(path), mode, mtime);
    d.owner = d.group = std::string(owner);
    parent.children.insert_or_assign(d.name, std::move(d));
    return *this;
  }

  ImageBuilder& file(std::string_view path, std::string_view content, std::uint16_t mode = 0644,
                     std::int64_t mtime = kInstallTime, std::string_view owner = "root",
                     std::string_view group = {}) {
    VfsNode& parent = parent_of(path);
    VfsNode f = VfsNode::file(base_name(path), std::string(content), mode, mtime);
    f.owner = std::string(owner);
    f.group = std::string(group.empty() ? owner : group);
    parent.children.insert_or_assign(f.name, std::move(f));
    return *this;
  }

  VfsNode build() { return std::move(root_); }

 private:
  VfsNode& parent_of(std::string_view path) {
    VfsNode* node = find_node(root_, parent_path(path));
    if (node == nullptr || !node->is_dir()) {
      throw SeedImageError("seed image: missing parent for " + std::string(path));
    }
    return *node;
  }

  VfsNode root_;
};

VfsNode build_default() {
  ImageBuilder b;
  for (auto d : {"/bin", "/boot", "/dev", "/etc", "/home", "/lib", "/media", "/mnt", "/opt",
                 "/proc", "/root", "/run", "/sbin", "/srv", "/sys", "/usr", "/var"}) {
    b.dir(d, std::string_view(d) == "/root" ? 0700 : 0755);
  }
  b.dir("/tmp", 0777, kRecentTime);
  for (auto d : {"/usr/bin", "/usr/sbin", "/usr/lib", "/usr/local", "/usr/local/bin",
                 "/usr/share", "/var/log", "/var/lib", "/var/www", "/var/www/html",
                 "/var/backups", "/var/mail", "/var/tmp", "/etc/ssh", "/etc/cron.d",
                 "/opt/scripts"}) {
    b.dir(d);
  }
  for (auto bin : kBinaries) {
    b.file("/usr/bin/" + std::string(bin), kElfStub, 0755);
    b.file("/bin/" + std::string(bin), kElfStub, 0755);
  }
  for (auto bin : kSbinaries) {
    b.file("/usr/sbin/" + std::string(bin), kElfStub, 0755);
    b.file("/sbin/" + std::string(bin), kElfStub, 0755);
  }

  b.file("/etc/passwd", kPasswd)
      .file("/etc/group", kGroup)
      .file("/etc/shadow", kShadow, 0640, kConfigTime, "root", "shadow")
      .file("/etc/hostname", "svr04\n", 0644, kConfigTime)
      .file("/etc/hosts", kHosts, 0644, kConfigTime)
      .file("/etc/os-release", kOsRelease)
      .file("/etc/lsb-release", kLsbRelease)
      .file("/etc/issue", "Ubuntu 20.04.6 LTS \\n \\l\n\n")
      .file("/etc/resolv.conf", kResolv)
      .file("/etc/fstab", kFstab)
      .file("/etc/crontab", kCrontab)
      .file("/etc/shells", kShells)
      .file("/etc/ssh/sshd_config", kSshdConfig, 0644, kConfigTime)
      .file("/proc/version", kProcVersion, 0444)
      .file("/proc/cpuinfo",
            "processor\t: 0\n" + std::string(kCpuInfoCore) + "\nprocessor\t: 1\n" +
                std::string(kCpuInfoCore) + "\n",
            0444)
      .file("/proc/meminfo", kMemInfo, 0444)
      .file("/var/log/auth.log", kAuthLog, 0640, kRecentTime, "syslog", "adm")
      .file("/var/log/syslog", kSyslog, 0640, kRecentTime, "syslog", "adm")
      .file("/var/www/html/index.html", kIndexHtml)
      .file("/opt/scripts/backup.sh", kBackupScript, 0750, kConfigTime)
      .file("/root/.bashrc", kBashrc)
      .file("/root/.profile", kProfile);

  b.dir("/home/ubuntu", 0755, kConfigTime, "ubuntu")
      .file("/home/ubuntu/.bashrc", kBashrc, 0644, kInstallTime, "ubuntu")
      .file("/home/ubuntu/.profile", kProfile, 0644, kInstallTime, "ubuntu");
  b.dir("/home/admin", 0755, kConfigTime, "admin")
      .file("/home/admin/.bashrc", kBashrc, 0644, kConfigTime, "admin");
  return b.build();
}

std::string octal(std::uint16_t mode) {
  std::ostringstream os;
  os << std::oct << (mode & 0777);
  return os.str();
}

}  // namespace

const VfsNode& default_seed_image() {
  static const VfsNode image = build_default();
  return image;
}

void save_seed_image(const VfsNode& root, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "files");
  std::ofstream manifest(dir / "manifest.tsv", std::ios::binary | std::ios::trunc);
  if (!manifest) throw SeedImageError("cannot write " + (dir / "manifest.tsv").string());
  manifest << "# decoysh seed image v1\n"
           << "# kind\tmode\towner\tgroup\tmtime\tpath\tcontent\n";
  std::function<void(const VfsNode&, const std::string&)> walk = [&](const VfsNode& node,
                                                                     const std::string& path) {
    for (const auto& [name, child] : node.children) {
      const std::string child_path = path + "/" + name;
      std::string ref = "-";
      if (!child.is_dir() && !child.content.empty()) {
        ref = "files" + child_path;
        fs::create_directories((dir / ref).parent_path());
        std::ofstream out(dir / ref, std::ios::binary | std::ios::trunc);
        out << child.content;
      }
      manifest << (child.is_dir() ? 'd' : 'f') << '\t' << octal(child.mode) << '\t'
               << child.owner << '\t' << child.group << '\t' << child.mtime << '\t'
               << child_path << '\t' << ref << '\n';
      if (child.is_dir()) walk(child, child_path);
    }
  };
  walk(root, "");
}

VfsNode load_seed_image(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw SeedImageError("cannot read seed manifest " + manifest_path.string());
  VfsNode root = VfsNode::directory("", 0755, kInstallTime);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> cols;
    std::istringstream fields(line);
    for (std::string col; std::getline(fields, col, '\t');) cols.push_back(col);
    if (cols.size() != 7 || (cols[0] != "d" && cols[0] != "f") || cols[5].empty() ||
        cols[5].front() != '/') {
      throw SeedImageError(manifest_path.string() + ":" + std::to_string(line_no) +
                           ": malformed record");
    }
    VfsNode* parent = find_node(root, parent_path(cols[5]));
    if (parent == nullptr || !parent->is_dir()) {
      throw SeedImageError(manifest_path.string() + ":" + std::to_string(line_no) +
                           ": parent directory not declared before " + cols[5]);
    }
    VfsNode node;
    node.name = base_name(cols[5]);
    node.kind = cols[0] == "d" ? NodeKind::directory : NodeKind::file;
    try {
      node.mode = static_cast<std::uint16_t>(std::stoul(cols[1], nullptr, 8) & 0777);
      node.mtime = std::stoll(cols[4]);
    } catch (const std::exception&) {
      throw SeedImageError(manifest_path.string() + ":" + std::to_string(line_no) +
                           ": bad mode or mtime");
    }
    node.owner = cols[2];
    node.group = cols[3];
    if (cols[6] != "-") {
      if (node.is_dir()) {
        throw SeedImageError(manifest_path.string() + ":" + std::to_string(line_no) +
                             ": directory with content");
      }
      std::ifstream content(manifest_path.parent_path() / cols[6], std::ios::binary);
      if (!content) throw SeedImageError("missing content file " + cols[6]);
      std::ostringstream buf;
      buf << content.rdbuf();
      node.content = buf.str();
    }
    parent->children.insert_or_assign(node.name, std::move(node));
  }
  return root;
}

}  // namespace decoysh::shell
