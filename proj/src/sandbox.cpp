#include "tqaprm/sandbox.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <optional>
#include <utility>

#include "tqaprm/error.hpp"

extern char** environ;

namespace tqaprm::sandbox {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }

  int get() const noexcept { return fd_; }
  explicit operator bool() const noexcept { return fd_ >= 0; }
  void reset() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

// Temporary working directory removed on scope exit.
class ScratchDir {
 public:
  ScratchDir() {
    auto pattern = (fs::temp_directory_path() / "tqaprm-exec-XXXXXX").string();
    std::vector<char> buf(pattern.begin(), pattern.end());
    buf.push_back('\0');
    if (!::mkdtemp(buf.data())) throw IoError("mkdtemp failed: " + std::string(std::strerror(errno)));
    path_ = buf.data();
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const noexcept { return path_; }

 private:
  fs::path path_;
};

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

std::string rstrip_newlines(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

std::optional<std::string> resolve_program(const std::string& name) {
  if (name.empty()) return std::nullopt;
  if (name.find('/') != std::string::npos) {
    if (::access(name.c_str(), X_OK) == 0) return name;
    return std::nullopt;
  }
  const char* path_env = std::getenv("PATH");
  std::string_view dirs = path_env ? path_env : "/usr/local/bin:/usr/bin:/bin";
  while (!dirs.empty()) {
    const auto colon = dirs.find(':');
    std::string dir(dirs.substr(0, colon));
    dirs = colon == std::string_view::npos ? std::string_view{} : dirs.substr(colon + 1);
    if (dir.empty()) dir = ".";
    auto candidate = dir + "/" + name;
    if (::access(candidate.c_str(), X_OK) == 0 && !fs::is_directory(candidate)) return candidate;
  }
  return std::nullopt;
}

std::string expand(std::string arg, const std::string& timeout, const std::string& workdir) {
  auto replace_all = [&arg](std::string_view key, const std::string& value) {
    std::size_t pos = 0;
    while ((pos = arg.find(key, pos)) != std::string::npos) {
      arg.replace(pos, key.size(), value);
      pos += value.size();
    }
  };
  replace_all("{timeout}", timeout);
  replace_all("{workdir}", workdir);
  return arg;
}

void set_nonblocking(int fd) {
  const int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

struct Capture {
  std::string data;
  bool truncated = false;
  bool open = true;
};

// Returns false on EOF.
bool drain(int fd, Capture& cap, std::size_t limit) {
  std::array<char, 8192> buf{};
  while (true) {
    const auto n = ::read(fd, buf.data(), buf.size());
    if (n > 0) {
      const auto room = limit > cap.data.size() ? limit - cap.data.size() : 0;
      const auto take = std::min<std::size_t>(room, static_cast<std::size_t>(n));
      cap.data.append(buf.data(), take);
      if (take < static_cast<std::size_t>(n)) cap.truncated = true;
      continue;
    }
    if (n == 0) return false;
    if (errno == EINTR) continue;
    return errno == EAGAIN || errno == EWOULDBLOCK;
  }
}

}  // namespace

std::string_view to_string(ExecStatus status) noexcept {
  switch (status) {
    case ExecStatus::Ok: return "ok";
    case ExecStatus::Error: return "error";
    case ExecStatus::Timeout: return "timeout";
    case ExecStatus::OutputTruncated: return "output-truncated";
  }
  return "error";
}

Extraction extract_code_blocks(std::string_view turn) {
  Extraction out;
  std::size_t pos = 0;
  while ((pos = turn.find("```", pos)) != std::string_view::npos) {
    std::size_t i = pos + 3;
    const std::size_t info_begin = i;
    while (i < turn.size() && (std::isalnum(static_cast<unsigned char>(turn[i])) || turn[i] == '_' ||
                               turn[i] == '+' || turn[i] == '-' || turn[i] == '.')) {
      ++i;
    }
    std::string info(turn.substr(info_begin, i - info_begin));
    while (i < turn.size() && (turn[i] == ' ' || turn[i] == '\t')) ++i;
    const bool inline_body = i < turn.size() && turn[i] != '\n' && turn[i] != '\r';
    if (!inline_body) {
      if (i < turn.size() && turn[i] == '\r') ++i;
      if (i < turn.size() && turn[i] == '\n') ++i;
    }
    const auto close = turn.find("```", i);
    if (close == std::string_view::npos) {
      out.diagnostics.push_back("unterminated code fence at offset " + std::to_string(pos));
      break;
    }
    std::string body(turn.substr(i, close - i));
    while (!body.empty() && is_space(body.back())) body.pop_back();
    if (!body.empty()) out.blocks.push_back(CodeBlock{std::move(body), std::move(info), pos});
    pos = close + 3;
  }
  return out;
}

bool is_executable(const CodeBlock& block) noexcept {
  std::string lang;
  for (char c : block.fence_language) lang += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return lang.empty() || lang == "python" || lang == "py" || lang == "python3";
}

ExecutionResult execute(const CodeBlock& block, const ExecutionLimits& limits, const ExecutorCommand& executor,
                        const ExecutionContext& context) {
  if (executor.argv.empty()) throw ConfigError("executor command is empty");
  if (limits.wall_timeout.count() <= 0) throw ValidationError("wall_timeout must be positive");
  if (limits.max_output_bytes == 0) throw ValidationError("max_output_bytes must be positive");
  const auto program = resolve_program(executor.argv.front());
  if (!program) throw ConfigError("executor \"" + executor.argv.front() + "\" not found or not executable");

  std::optional<ScratchDir> scratch;
  fs::path workdir = limits.working_dir;
  if (workdir.empty()) {
    scratch.emplace();
    workdir = scratch->path();
  } else {
    std::error_code ec;
    fs::create_directories(workdir, ec);
    if (ec) throw IoError("cannot create working dir " + workdir.string());
  }

  std::map<std::string, std::string> env_overrides = context.extra_env;
  if (!context.table_text.empty()) {
    const auto table_path = workdir / "table.txt";
    std::ofstream(table_path, std::ios::binary) << context.table_text;
    env_overrides[kTableFileEnv] = table_path.string();
  }

  // Everything the child needs is prepared before fork().
  const auto timeout_s = std::to_string((limits.wall_timeout.count() + 999) / 1000);
  std::vector<std::string> args;
  for (const auto& a : executor.argv) args.push_back(expand(a, timeout_s, workdir.string()));
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);

  std::vector<std::string> env_strings;
  for (char** e = environ; e && *e; ++e) {
    std::string_view entry(*e);
    const auto key = std::string(entry.substr(0, entry.find('=')));
    if (!env_overrides.count(key)) env_strings.emplace_back(entry);
  }
  for (const auto& [k, v] : env_overrides) env_strings.push_back(k + "=" + v);
  std::vector<char*> envp;
  for (auto& e : env_strings) envp.push_back(e.data());
  envp.push_back(nullptr);
  const std::string workdir_str = workdir.string();

  // stdin is a socket so that writes after the child exits fail with EPIPE
  // (MSG_NOSIGNAL) instead of raising SIGPIPE in this process.
  int in_pair[2], out_pipe[2], err_pipe[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, in_pair) != 0) throw IoError("socketpair failed");
  Fd in_parent(in_pair[0]), in_child(in_pair[1]);
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) throw IoError("pipe failed");
  Fd out_parent(out_pipe[0]), out_child(out_pipe[1]);
  if (::pipe2(err_pipe, O_CLOEXEC) != 0) throw IoError("pipe failed");
  Fd err_parent(err_pipe[0]), err_child(err_pipe[1]);

  const auto start = Clock::now();
  const pid_t pid = ::fork();
  if (pid < 0) throw IoError("fork failed: " + std::string(std::strerror(errno)));
  if (pid == 0) {
    ::setpgid(0, 0);
    ::dup2(in_child.get(), STDIN_FILENO);
    ::dup2(out_child.get(), STDOUT_FILENO);
    ::dup2(err_child.get(), STDERR_FILENO);
    if (::chdir(workdir_str.c_str()) != 0) ::_exit(126);
    ::execve(program->c_str(), argv.data(), envp.data());
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  in_child.reset();
  out_child.reset();
  err_child.reset();
  set_nonblocking(in_parent.get());
  set_nonblocking(out_parent.get());
  set_nonblocking(err_parent.get());

  const auto deadline = start + limits.wall_timeout;
  std::string_view pending = block.source;
  std::string source_with_newline;
  if (pending.empty() || pending.back() != '\n') {
    source_with_newline = std::string(pending) + "\n";
    pending = source_with_newline;
  }
  if (pending.empty()) {
    ::shutdown(in_parent.get(), SHUT_WR);
    in_parent.reset();
  }

  Capture out_cap, err_cap;
  bool timed_out = false;
  bool exited = false;
  int wait_status = 0;

  while (out_cap.open || err_cap.open || !exited) {
    if (!exited) {
      const pid_t r = ::waitpid(pid, &wait_status, WNOHANG);
      if (r == pid) {
        exited = true;
        // Descendants may still hold the pipes open.
        ::kill(-pid, SIGKILL);
      }
    }
    const auto now = Clock::now();
    if (!timed_out && !exited && now >= deadline) {
      timed_out = true;
      ::kill(-pid, SIGKILL);
      ::kill(pid, SIGKILL);
    }

    std::vector<pollfd> fds;
    if (out_cap.open) fds.push_back({out_parent.get(), POLLIN, 0});
    if (err_cap.open) fds.push_back({err_parent.get(), POLLIN, 0});
    if (in_parent) fds.push_back({in_parent.get(), POLLOUT, 0});
    int wait_ms = 20;
    if (!timed_out && !exited) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
      wait_ms = static_cast<int>(std::clamp<long long>(left, 0, 20));
    }
    if (fds.empty()) {
      if (!exited) {
        ::usleep(static_cast<useconds_t>(wait_ms) * 1000);
      }
      continue;
    }
    const int ready = ::poll(fds.data(), fds.size(), wait_ms);
    if (ready < 0 && errno != EINTR) break;
    for (const auto& p : fds) {
      if (p.revents == 0) continue;
      if (p.fd == out_parent.get() && out_cap.open) {
        out_cap.open = drain(p.fd, out_cap, limits.max_output_bytes);
      } else if (p.fd == err_parent.get() && err_cap.open) {
        err_cap.open = drain(p.fd, err_cap, limits.max_output_bytes);
      } else if (in_parent && p.fd == in_parent.get()) {
        if (p.revents & (POLLERR | POLLHUP)) {
          in_parent.reset();
          continue;
        }
        const auto n = ::send(in_parent.get(), pending.data(), pending.size(), MSG_NOSIGNAL);
        if (n > 0) pending.remove_prefix(static_cast<std::size_t>(n));
        else if (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR) pending = {};
        if (pending.empty()) {
          ::shutdown(in_parent.get(), SHUT_WR);
          in_parent.reset();
        }
      }
    }
    // After the process group is gone, stragglers cannot keep the pipes open
    // for long; stop waiting once the timeout grace has passed.
    if (exited && Clock::now() > deadline + std::chrono::milliseconds(250)) break;
  }
  if (!exited) {
    ::kill(-pid, SIGKILL);
    ::waitpid(pid, &wait_status, 0);
  }

  ExecutionResult result;
  result.duration = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start);
  result.stdout_text = std::move(out_cap.data);
  result.stderr_text = std::move(err_cap.data);
  result.truncated = out_cap.truncated || err_cap.truncated;
  if (WIFEXITED(wait_status)) result.exit_code = WEXITSTATUS(wait_status);
  else if (WIFSIGNALED(wait_status)) result.exit_code = 128 + WTERMSIG(wait_status);

  if (timed_out) {
    result.status = ExecStatus::Timeout;
    result.duration = std::max(result.duration, limits.wall_timeout);
  } else if (result.exit_code != 0) {
    result.status = ExecStatus::Error;
  } else if (result.truncated) {
    result.status = ExecStatus::OutputTruncated;
  }
  return result;
}

std::string format_feedback(const ExecutionResult& result) {
  std::string out = "[Code Output]\n" + rstrip_newlines(result.stdout_text);
  switch (result.status) {
    case ExecStatus::Timeout:
      out += "\n[Timeout] Execution exceeded the time limit and was terminated.";
      break;
    case ExecStatus::Error:
      out += "\n[Error] Process exited with status " + std::to_string(result.exit_code) + ".";
      break;
    case ExecStatus::Ok:
    case ExecStatus::OutputTruncated:
      break;
  }
  if (result.status != ExecStatus::Ok) {
    const auto err = rstrip_newlines(result.stderr_text);
    if (!err.empty()) out += "\n[Stderr]\n" + err;
  }
  if (result.truncated) {
    out += '\n';
    out += kTruncationMarker;
  }
  return out;
}

}  // namespace tqaprm::sandbox
