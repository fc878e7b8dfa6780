#pragma once

#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "droidlens/device/driver.hpp"
#include "droidlens/error.hpp"
#include "droidlens/gui_model.hpp"
#include "droidlens/raster.hpp"
#include "droidlens/text.hpp"

extern char** environ;

namespace droidlens::device {

struct CommandResult {
  int exit_code = 0;
  std::string out;
  std::string err;
  bool spawn_failed = false;  // binary missing or not executable
  bool timed_out = false;
};

/// Runs argv[0] (PATH lookup) and collects stdout/stderr.
class CommandRunner {
 public:
  virtual ~CommandRunner() = default;
  virtual CommandResult run(const std::vector<std::string>& argv, int timeout_ms) = 0;
};

class PosixRunner final : public CommandRunner {
 public:
  CommandResult run(const std::vector<std::string>& argv, int timeout_ms) override {
    CommandResult r;
    int out_pipe[2], err_pipe[2];
    if (pipe(out_pipe) != 0 || pipe(err_pipe) != 0) {
      r.spawn_failed = true;
      r.err = std::strerror(errno);
      return r;
    }
    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    posix_spawn_file_actions_adddup2(&fa, out_pipe[1], 1);
    posix_spawn_file_actions_adddup2(&fa, err_pipe[1], 2);
    posix_spawn_file_actions_addclose(&fa, out_pipe[0]);
    posix_spawn_file_actions_addclose(&fa, err_pipe[0]);
    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);
    pid_t pid = 0;
    const int rc = posix_spawnp(&pid, args[0], &fa, nullptr, args.data(), environ);
    posix_spawn_file_actions_destroy(&fa);
    close(out_pipe[1]);
    close(err_pipe[1]);
    if (rc != 0) {
      close(out_pipe[0]);
      close(err_pipe[0]);
      r.spawn_failed = true;
      r.err = std::strerror(rc);
      return r;
    }

    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    pollfd fds[2] = {{out_pipe[0], POLLIN, 0}, {err_pipe[0], POLLIN, 0}};
    int open_fds = 2;
    char buf[65536];
    while (open_fds > 0) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now()).count();
      if (left <= 0) {
        r.timed_out = true;
        kill(pid, SIGKILL);
        break;
      }
      if (poll(fds, 2, static_cast<int>(left)) < 0) {
        if (errno == EINTR) continue;
        break;
      }
      for (int i = 0; i < 2; ++i) {
        if (fds[i].fd < 0 || !(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
        const ssize_t n = read(fds[i].fd, buf, sizeof buf);
        if (n <= 0) {
          close(fds[i].fd);
          fds[i].fd = -1;
          --open_fds;
        } else {
          (i == 0 ? r.out : r.err).append(buf, static_cast<std::size_t>(n));
        }
      }
    }
    for (auto& f : fds)
      if (f.fd >= 0) close(f.fd);
    int status = 0;
    waitpid(pid, &status, 0);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
    return r;
  }
};

struct AdbConfig {
  std::string adb_path = "adb";
  std::string serial;  // empty: the only attached device
  int timeout_ms = 30000;
  int long_press_ms = 800;
  int swipe_ms = 300;
  int settle_ms = 0;  // pause after each action before the next capture
  std::string dump_path = "/sdcard/window_dump.xml";
};

/// Tap point and swipe geometry, exposed for tests.
struct Gesture {
  enum class Kind { Tap, Swipe } kind = Kind::Tap;
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0, duration_ms = 0;
  friend bool operator==(const Gesture&, const Gesture&) = default;
};

inline Gesture tap_at_center(const Bounds& b) {
  return {Gesture::Kind::Tap, b.center_x(), b.center_y(), b.center_x(), b.center_y(), 0};
}

/// Swipe across 75% -> 25% of the widget's span along the scroll axis.
inline Gesture scroll_gesture(const Bounds& b, ScrollDirection dir, int duration_ms) {
  const int cx = b.center_x(), cy = b.center_y();
  const int h = b.bottom - b.top, w = b.right - b.left;
  const int y75 = b.top + h * 3 / 4, y25 = b.top + h / 4;
  const int x75 = b.left + w * 3 / 4, x25 = b.left + w / 4;
  switch (dir) {
    case ScrollDirection::Down: return {Gesture::Kind::Swipe, cx, y75, cx, y25, duration_ms};
    case ScrollDirection::Up: return {Gesture::Kind::Swipe, cx, y25, cx, y75, duration_ms};
    case ScrollDirection::Right: return {Gesture::Kind::Swipe, x75, cy, x25, cy, duration_ms};
    case ScrollDirection::Left: return {Gesture::Kind::Swipe, x25, cy, x75, cy, duration_ms};
  }
  return {};
}

/// `input text` argument: spaces become %s, shell metacharacters are escaped.
inline std::string escape_input_text(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == ' ') {
      out += "%s";
    } else if (std::strchr("\\\"'()<>|;&*~$`!?[]{}#", c) && c != '\0') {
      out += '\\';
      out += c;
    } else {
      out += c;
    }
  }
  return out;
}

/// Pulls "pkg/.Activity" out of dumpsys output and expands it.
inline std::optional<std::string> parse_resumed_activity(std::string_view dumpsys) {
  for (const char* marker : {"topResumedActivity", "mResumedActivity", "mFocusedActivity"}) {
    const auto pos = dumpsys.find(marker);
    if (pos == std::string_view::npos) continue;
    const auto eol = dumpsys.find('\n', pos);
    const auto line = dumpsys.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
    for (const auto& tok : [&] {
           std::vector<std::string> toks;
           std::string cur;
           for (char c : line) {
             if (text::is_space(c) || c == '{' || c == '}') {
               if (!cur.empty()) toks.push_back(cur);
               cur.clear();
             } else {
               cur += c;
             }
           }
           if (!cur.empty()) toks.push_back(cur);
           return toks;
         }()) {
      const auto slash = tok.find('/');
      if (slash == std::string::npos || slash == 0) continue;
      const std::string pkg = tok.substr(0, slash);
      return expand_activity_name(pkg, tok.substr(slash + 1));
    }
  }
  return std::nullopt;
}

/// Real-device driver over the debug bridge.
class AdbDriver final : public DeviceDriver {
 public:
  explicit AdbDriver(AdbConfig cfg = {}, std::shared_ptr<CommandRunner> runner = std::make_shared<PosixRunner>())
      : cfg_(std::move(cfg)), runner_(std::move(runner)) {}

  Outcome launch(const std::string& package) override {
    package_ = package;
    const auto r = adb({"shell", "monkey", "-p", package, "-c", "android.intent.category.LAUNCHER", "1"});
    if (auto bad = failure(r)) return *bad;
    return Outcome::ok();
  }

  Raster capture_screenshot() override {
    const auto r = adb({"exec-out", "screencap", "-p"});
    throw_on_failure(r, "screencap");
    const auto* p = reinterpret_cast<const std::uint8_t*>(r.out.data());
    return decode_png({p, r.out.size()});
  }

  std::string dump_hierarchy() override {
    throw_on_failure(adb({"shell", "uiautomator", "dump", cfg_.dump_path}), "uiautomator dump");
    const auto r = adb({"exec-out", "cat", cfg_.dump_path});
    throw_on_failure(r, "reading hierarchy dump");
    return r.out;
  }

  std::string current_activity() override {
    const auto r = adb({"shell", "dumpsys", "activity", "activities"});
    throw_on_failure(r, "dumpsys activity");
    return parse_resumed_activity(r.out).value_or("");
  }

  Outcome perform(const Action& action, const Bounds& bounds) override {
    std::vector<std::vector<std::string>> cmds;
    const auto tap = tap_at_center(bounds);
    switch (action.kind) {
      case ActionKind::Click:
      case ActionKind::Check:
        cmds.push_back(tap_cmd(tap));
        break;
      case ActionKind::LongClick:
        cmds.push_back(swipe_cmd({Gesture::Kind::Swipe, tap.x1, tap.y1, tap.x1, tap.y1, cfg_.long_press_ms}));
        break;
      case ActionKind::Input:
        cmds.push_back(tap_cmd(tap));
        cmds.push_back({"shell", "input", "text", escape_input_text(action.input_text.value_or(""))});
        break;
      case ActionKind::Scroll:
        cmds.push_back(swipe_cmd(scroll_gesture(bounds, action.scroll_direction.value_or(ScrollDirection::Down), cfg_.swipe_ms)));
        break;
    }
    for (const auto& c : cmds)
      if (auto bad = failure(adb(c))) return *bad;
    if (cfg_.settle_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.settle_ms));
    if (!package_.empty()) {
      const auto r = adb({"shell", "dumpsys", "activity", "activities"});
      if (auto bad = failure(r)) return *bad;
      const auto act = parse_resumed_activity(r.out);
      if (act && !text::starts_with(*act, package_ + "."))
        return Outcome::app_exited("foreground moved to " + *act);
    }
    return Outcome::ok();
  }

  Outcome restart() override {
    if (package_.empty()) return Outcome::failed("restart before launch");
    if (auto bad = failure(adb({"shell", "am", "force-stop", package_}))) return *bad;
    return launch(package_);
  }

  /// The adb argv for a gesture (without the adb/-s prefix).
  static std::vector<std::string> tap_cmd(const Gesture& g) {
    return {"shell", "input", "tap", std::to_string(g.x1), std::to_string(g.y1)};
  }
  static std::vector<std::string> swipe_cmd(const Gesture& g) {
    return {"shell", "input", "swipe", std::to_string(g.x1), std::to_string(g.y1), std::to_string(g.x2),
            std::to_string(g.y2), std::to_string(g.duration_ms)};
  }

 private:
  CommandResult adb(const std::vector<std::string>& args) {
    std::vector<std::string> argv{cfg_.adb_path};
    if (!cfg_.serial.empty()) {
      argv.push_back("-s");
      argv.push_back(cfg_.serial);
    }
    argv.insert(argv.end(), args.begin(), args.end());
    return runner_->run(argv, cfg_.timeout_ms);
  }

  std::optional<Outcome> failure(const CommandResult& r) const {
    if (r.spawn_failed)
      return Outcome::failed("cannot run debug bridge '" + cfg_.adb_path + "' (" + r.err +
                             "); install Android platform-tools or pass its path with --adb");
    if (r.timed_out) return Outcome::failed("debug bridge timed out after " + std::to_string(cfg_.timeout_ms) + " ms");
    if (r.exit_code != 0) return Outcome::failed("debug bridge exited " + std::to_string(r.exit_code) + ": " + text::trim(r.err));
    return std::nullopt;
  }

  void throw_on_failure(const CommandResult& r, const std::string& what) const {
    if (auto bad = failure(r)) throw Error(ErrorCode::DriverFailure, what + ": " + bad->reason);
  }

  AdbConfig cfg_;
  std::shared_ptr<CommandRunner> runner_;
  std::string package_;
};

}  // namespace droidlens::device
