#pragma once

// Kinematic bicycle plant with actuation delay, plus the PI speed and Stanley
// steering controllers that drive it.
//
// None of the vehicle numbers below come from a real platform; they are
// desk-scale surrogates for a small electric utility vehicle.

#include <algorithm>
#include <cmath>
#include <deque>

#include "mrsim/geometry.hpp"

namespace mrsim {

struct PlantParams {
  double wheelbase = 1.75;
  double v_max = 11.1;  // 25 mph
  double steer_max = 0.6;
  double accel_max = 1.5;
  double decel_max = 3.0;  // magnitude of the strongest braking
  double latency = 0.2;    // actuation delay, seconds
  double substep = 0.05;
  // Footprint used for collision checks, centred on the plant pose.
  double half_length = 1.35;
  double half_width = 0.7;

  void validate() const {
    if (!(wheelbase > 0 && v_max > 0 && steer_max > 0 && accel_max > 0 && decel_max > 0 && latency >= 0 &&
          substep > 0 && substep <= 0.1 && half_length > 0 && half_width > 0))
      throw ValidationError("plant: parameters must be positive (substep in (0, 0.1])");
  }
};

struct PlantState {
  Pose2 pose;
  double speed = 0.0;
  double steer = 0.0;
  friend bool operator==(const PlantState&, const PlantState&) = default;
};

/// Default gains were tuned in closed loop against this plant (with the 0.2 s
/// actuation delay) to settle speed within 0.05 m/s and a 2 m lateral offset
/// within 0.05 m with negligible overshoot.
struct ControllerGains {
  double kp = 2.0;
  double ki = 0.2;
  double integral_limit = 0.2;  // m, anti-windup clamp on the speed-error integral
  double k_stanley = 0.5;
  double v_softening = 0.5;

  void validate() const {
    if (!(kp >= 0 && ki >= 0 && integral_limit >= 0 && k_stanley >= 0 && v_softening > 0))
      throw ValidationError("controller gains: kp, ki, k_stanley >= 0 and v_softening > 0 required");
  }
};

/// One semi-implicit Euler step: speed first, then heading, then position with
/// the updated heading. Commands are clamped; no delay is applied here.
inline PlantState step_plant(const PlantState& s, double accel, double steer_cmd, double dt, const PlantParams& p) {
  PlantState n;
  const double a = std::clamp(accel, -p.decel_max, p.accel_max);
  n.steer = std::clamp(steer_cmd, -p.steer_max, p.steer_max);
  n.speed = std::clamp(s.speed + a * dt, 0.0, p.v_max);
  const double heading = s.pose.heading + n.speed / p.wheelbase * std::tan(n.steer) * dt;
  n.pose = Pose2(s.pose.x + n.speed * std::cos(heading) * dt, s.pose.y + n.speed * std::sin(heading) * dt, heading);
  return n;
}

struct Actuation {
  double accel = 0.0;
  double steer = 0.0;
};

/// Delays commands by a fixed latency. Before any command has aged past the
/// latency the initial actuation (coast, wheels straight) is applied.
class ActuationDelay {
 public:
  explicit ActuationDelay(double latency = 0.2, Actuation initial = {}) : latency_(latency), current_(initial) {}

  /// Queues `cmd` issued at time `now` and returns the actuation in force at `now`.
  Actuation push(double now, Actuation cmd) {
    queue_.push_back({now, cmd});
    // Small tolerance so that latency / dt steps delay exactly that many steps.
    while (!queue_.empty() && queue_.front().t + latency_ <= now + 1e-9) {
      current_ = queue_.front().cmd;
      queue_.pop_front();
    }
    return current_;
  }

 private:
  struct Entry {
    double t;
    Actuation cmd;
  };
  double latency_;
  Actuation current_;
  std::deque<Entry> queue_;
};

/// Plant plus its actuation delay line.
class Vehicle {
 public:
  Vehicle(PlantState initial, PlantParams params)
      : state_(initial), params_(params), delay_(params.latency) {
    params_.validate();
  }

  const PlantState& state() const { return state_; }
  const PlantParams& params() const { return params_; }
  Obb2 footprint() const { return Obb2{state_.pose, params_.half_length, params_.half_width}; }

  /// Advances one substep; `now` is the time the command is issued.
  const PlantState& step(double now, double accel, double steer) {
    const Actuation a = delay_.push(now, {accel, steer});
    state_ = step_plant(state_, a.accel, a.steer, params_.substep, params_);
    return state_;
  }

 private:
  PlantState state_;
  PlantParams params_;
  ActuationDelay delay_;
};

struct PiOutput {
  double accel;
  double integral;
};

inline PiOutput pi_speed(double target, double current, double integral, double dt, const ControllerGains& g,
                         const PlantParams& p) {
  const double e = target - current;
  const double i = std::clamp(integral + e * dt, -g.integral_limit, g.integral_limit);
  return {std::clamp(g.kp * e + g.ki * i, -p.decel_max, p.accel_max), i};
}

/// Stanley lateral law. The cross-track term steers toward the path: a vehicle
/// right of the path (path_frame e < 0) gets a positive (leftward) command.
inline double stanley_steer(const PlantState& s, const PlannedPath& path, const ControllerGains& g,
                            const PlantParams& p) {
  const PathFrame f = path_frame(path, s.pose.position());
  const double heading_error = normalize_angle(f.heading_ref - s.pose.heading);
  const double cross = -f.e;
  const double delta = heading_error + std::atan(g.k_stanley * cross / (s.speed + g.v_softening));
  return std::clamp(delta, -p.steer_max, p.steer_max);
}

/// PI + Stanley bundled with the integral state.
class Controller {
 public:
  explicit Controller(ControllerGains gains = {}) : gains_(gains) { gains_.validate(); }

  Actuation update(double target_speed, const PlantState& s, const PlannedPath& path, const PlantParams& p,
                   double dt) {
    const auto pi = pi_speed(target_speed, s.speed, integral_, dt, gains_, p);
    integral_ = pi.integral;
    return {pi.accel, stanley_steer(s, path, gains_, p)};
  }

  const ControllerGains& gains() const { return gains_; }

 private:
  ControllerGains gains_;
  double integral_ = 0.0;
};

}  // namespace mrsim
