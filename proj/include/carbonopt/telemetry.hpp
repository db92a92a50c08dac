#pragma once

// Energy and CO2 accounting for compute jobs. Energy is estimated as a fixed
// device power draw times wall-clock time.

#include <chrono>
#include <optional>

namespace carbonopt::telemetry {

inline constexpr double kDefaultCarbonIntensity = 205.2;  // g CO2 per kWh

struct EmissionEstimate {
  double energy_wh = 0.0;
  double carbon_g = 0.0;
  double intensity_g_per_kwh = kDefaultCarbonIntensity;
};

/// energy_wh = J / 3600, carbon_g = energy_wh * intensity / 1000.
EmissionEstimate estimate_emissions(double energy_joules, double intensity_g_per_kwh = kDefaultCarbonIntensity);

/// At most one meter may be running in a process at any time.
class EnergyMeter {
 public:
  explicit EnergyMeter(double device_power_watts);
  ~EnergyMeter();
  EnergyMeter(const EnergyMeter&) = delete;
  EnergyMeter& operator=(const EnergyMeter&) = delete;

  void start();
  /// Joules consumed since start().
  double stop();
  bool running() const { return start_.has_value(); }
  double seconds() const { return seconds_; }

 private:
  double watts_;
  std::optional<std::chrono::steady_clock::time_point> start_;
  double seconds_ = 0.0;
};

template <class Workload>
double meter_run(Workload&& workload, double device_power_watts) {
  EnergyMeter meter(device_power_watts);
  meter.start();
  workload();
  return meter.stop();
}

}  // namespace carbonopt::telemetry
