#include "carbonopt/telemetry.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>
#include <string>

namespace carbonopt::telemetry {

namespace {
std::atomic<bool> g_meter_active{false};
}

EmissionEstimate estimate_emissions(double energy_joules, double intensity_g_per_kwh) {
  if (!(energy_joules >= 0.0) || !std::isfinite(energy_joules)) {
    throw std::invalid_argument("energy must be a non-negative finite number of joules, got " +
                                std::to_string(energy_joules));
  }
  if (!(intensity_g_per_kwh >= 0.0) || !std::isfinite(intensity_g_per_kwh)) {
    throw std::invalid_argument("carbon intensity must be non-negative and finite, got " +
                                std::to_string(intensity_g_per_kwh));
  }
  EmissionEstimate e;
  e.energy_wh = energy_joules / 3600.0;
  e.carbon_g = e.energy_wh * intensity_g_per_kwh / 1000.0;
  e.intensity_g_per_kwh = intensity_g_per_kwh;
  return e;
}

EnergyMeter::EnergyMeter(double device_power_watts) : watts_(device_power_watts) {
  if (!(device_power_watts > 0.0) || !std::isfinite(device_power_watts)) {
    throw std::invalid_argument("device power must be positive and finite");
  }
}

EnergyMeter::~EnergyMeter() {
  if (running()) g_meter_active.store(false);
}

void EnergyMeter::start() {
  if (running()) throw std::logic_error("energy meter already started");
  bool expected = false;
  if (!g_meter_active.compare_exchange_strong(expected, true)) {
    throw std::logic_error("nested energy meters are not supported: another meter is already running");
  }
  start_ = std::chrono::steady_clock::now();
}

double EnergyMeter::stop() {
  if (!running()) throw std::logic_error("energy meter stopped without being started");
  seconds_ = std::chrono::duration<double>(std::chrono::steady_clock::now() - *start_).count();
  start_.reset();
  g_meter_active.store(false);
  return watts_ * seconds_;
}

}  // namespace carbonopt::telemetry
