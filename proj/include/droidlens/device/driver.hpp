#pragma once

#include <string>

#include "droidlens/gui_model.hpp"
#include "droidlens/raster.hpp"

namespace droidlens::device {

enum class OutcomeKind { Ok, AppExited, Failed };

struct Outcome {
  OutcomeKind kind = OutcomeKind::Ok;
  std::string reason;

  static Outcome ok() { return {}; }
  static Outcome app_exited(std::string why = {}) { return {OutcomeKind::AppExited, std::move(why)}; }
  static Outcome failed(std::string why) { return {OutcomeKind::Failed, std::move(why)}; }
};

/// Capability contract shared by the debug-bridge driver and the simulator.
class DeviceDriver {
 public:
  virtual ~DeviceDriver() = default;
  virtual Outcome launch(const std::string& package) = 0;
  virtual Raster capture_screenshot() = 0;
  virtual std::string dump_hierarchy() = 0;
  virtual std::string current_activity() = 0;
  virtual Outcome perform(const Action& action, const Bounds& bounds) = 0;
  virtual Outcome restart() = 0;
};

}  // namespace droidlens::device
