// Discrete-time quadcopter tracking simulator with a thermal disturbance
// field acting on the vertical axis. Implements the online learning loop:
// evaluate the disturbance model, adapt the z feedback gain to predicted
// aleatoric variance, gate measurements on epistemic probability, retrain
// warm-started after every accepted sample.
#pragma once

#include "epiout/csv.hpp"
#include "epiout/epi_sampler.hpp"
#include "epiout/net.hpp"

#include <utility>

namespace epiout {
namespace sim {

inline constexpr double kGravity = 9.81;

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

struct ThermalBump {
  Vec2 center;
  double amplitude = 0.0;   // mean updraft at the bump center [m/s]
  double radius = 0.0;      // spatial decay scale [m]
  double sigma_amplitude = 0.0;
};

struct ThermalField {
  std::vector<ThermalBump> bumps;
  double sigma0 = 0.02;
  double sigma_min = 1e-6;

  // mu as a sum of Gaussian bumps; sigma as the base level plus the
  // bump-linked terms, floored at sigma_min.
  std::pair<double, double> eval(const Vec2& p) const {
    require(p.allFinite(), "thermal_eval: non-finite position");
    double mu = 0.0, sigma = sigma0;
    for (const auto& b : bumps) {
      const double w = std::exp(-(p - b.center).squaredNorm() / (2.0 * sq(b.radius)));
      mu += b.amplitude * w;
      sigma += b.sigma_amplitude * w;
    }
    return {mu, std::max(sigma, sigma_min)};
  }
};

// Three bumps inside the 0.1-edge arena; sigma terms scale with half the
// mean amplitude.
inline ThermalField default_thermal_field() {
  ThermalField f;
  f.bumps = {
      {{0.05, 0.02}, 0.8, 0.03, 0.4},
      {{-0.05, -0.03}, -0.4, 0.05, 0.2},
      {{0.0, -0.05}, 0.5, 0.04, 0.25},
  };
  f.sigma0 = 0.02;
  f.sigma_min = 1e-6;
  return f;
}

struct SimState {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  long step = 0;
};

struct Reference {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Vec3 acceleration = Vec3::Zero();
};

struct ControllerConfig {
  double k_bar = 100.0;  // minimum position gain
  double beta = 2.0;     // aleatoric gain sensitivity
  double dt = 0.01;
  double edge = 0.1;     // square trajectory edge length
  int laps = 3;
  int steps_per_lap = 2000;
  std::uint64_t seed = 0;
  int retrain_epochs = 50;
  double retrain_learning_rate = 5e-3;
  double lambda_epi = 2.0;
  double gamma = 1e-3;   // epi sampling variance in raw input units
  int delta = 0;         // 0 = 2*d_x+1
  bool gain_on_stddev = false;  // variance by default, config switch
  double max_gain_scale = 50.0;  // cap on 1 + beta*Var, discrete stability guard
  double divergence_limit = 1e3;
};

// Square in the x-y plane, edge cfg.edge, centered at the origin, z = 0,
// traversed counterclockwise at constant speed.
inline Reference square_reference(const ControllerConfig& cfg, long step) {
  const double perimeter = 4.0 * cfg.edge;
  const double lap_time = cfg.steps_per_lap * cfg.dt;
  const double speed = perimeter / lap_time;
  double s = std::fmod(speed * (step * cfg.dt), perimeter);
  if (s < 0.0) s += perimeter;
  const double h = cfg.edge / 2.0;
  Reference ref;
  Vec2 pos, dir;
  if (s < cfg.edge) {
    pos = {-h + s, -h};
    dir = {1.0, 0.0};
  } else if (s < 2.0 * cfg.edge) {
    pos = {h, -h + (s - cfg.edge)};
    dir = {0.0, 1.0};
  } else if (s < 3.0 * cfg.edge) {
    pos = {h - (s - 2.0 * cfg.edge), h};
    dir = {-1.0, 0.0};
  } else {
    pos = {-h, h - (s - 3.0 * cfg.edge)};
    dir = {0.0, -1.0};
  }
  ref.position << pos(0), pos(1), 0.0;
  ref.velocity << speed * dir(0), speed * dir(1), 0.0;
  return ref;
}

// Discrete double integrator per axis (position from the pre-step
// velocity, acceleration into velocity) plus the disturbance impulse on
// the z velocity, drawn at the pre-step planar position. The impulse
// enters the same channel as u dt, so a feedforward of -mu/dt cancels a
// known mean disturbance exactly. Always consumes one normal draw so
// parallel runs stay stream-aligned.
inline SimState step_dynamics(const SimState& state, const Vec3& u,
                              const ThermalField& field, double dt, Rng& rng,
                              double* disturbance = nullptr) {
  const Vec3 a = u + Vec3(0.0, 0.0, -kGravity);
  SimState next;
  next.position = state.position + state.velocity * dt;
  next.velocity = state.velocity + a * dt;
  const auto [mu, sigma] = field.eval(state.position.head<2>());
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double y = mu + sigma * gauss(rng);
  next.velocity(2) += y;
  next.step = state.step + 1;
  if (disturbance) *disturbance = y;
  return next;
}

// K = k_bar (I + beta diag(Var)); only the z entry is adapted because the
// disturbance acts on z alone. The scale cap keeps the discrete loop away
// from its stability boundary when the predicted scale spikes transiently.
inline Vec3 adapt_gains(double k_bar, double beta, double sigma_hat,
                        bool on_stddev = false, double max_scale = 50.0) {
  require(sigma_hat >= 0.0, "adapt_gains: negative scale");
  Vec3 gains = Vec3::Constant(k_bar);
  const double spread = on_stddev ? sigma_hat : sq(sigma_hat);
  gains(2) = k_bar * std::min(1.0 + beta * spread, max_scale);
  return gains;
}

// u = Kp (p_des - p) + Kv (v_des - v) + u_ff with critically damped
// velocity gains; u_ff carries gravity, the reference acceleration and
// the predicted mean disturbance (a velocity impulse per step, hence /dt).
inline Vec3 feedback_control(const SimState& state, const Reference& ref,
                             const Vec3& position_gains, double mu_hat, double dt) {
  const Vec3 kp = position_gains;
  const Vec3 kv = 2.0 * position_gains.cwiseSqrt();
  Vec3 u_ff = ref.acceleration + Vec3(0.0, 0.0, kGravity) - Vec3(0.0, 0.0, mu_hat / dt);
  return kp.cwiseProduct(ref.position - state.position) +
         kv.cwiseProduct(ref.velocity - state.velocity) + u_ff;
}

inline bool accept_measurement(double eta, Rng& rng) {
  require(eta >= 0.0 && eta <= 1.0, "accept_measurement: eta outside [0,1]");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return u(rng) < eta;
}

class SimDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SimStepRow {
  long step = 0;
  double t = 0.0;
  Vec3 position = Vec3::Zero();
  Vec3 reference = Vec3::Zero();
  Vec3 control = Vec3::Zero();
  double mu_hat = 0.0;
  double sigma_hat = 0.0;
  double eta = 0.0;
  double k_zz = 0.0;
  bool accepted = false;
  int n_tr = 0;
  double disturbance = 0.0;
};

struct AcceptEvent {
  long step = 0;
  Vec2 position = Vec2::Zero();
  double eta_before = 0.0;
  double eta_after = 0.0;
  double retrain_loss = 0.0;
};

struct SimLog {
  std::vector<SimStepRow> rows;
  std::vector<AcceptEvent> accepts;

  double z_rmse(long from_step, long to_step) const {
    double acc = 0.0;
    long n = 0;
    for (const auto& r : rows) {
      if (r.step < from_step || r.step >= to_step) continue;
      acc += sq(r.position(2) - r.reference(2));
      ++n;
    }
    require(n > 0, "z_rmse: empty step range");
    return std::sqrt(acc / n);
  }

  double mean_control_norm(long from_step, long to_step) const {
    double acc = 0.0;
    long n = 0;
    for (const auto& r : rows) {
      if (r.step < from_step || r.step >= to_step) continue;
      acc += r.control.norm();
      ++n;
    }
    require(n > 0, "mean_control_norm: empty step range");
    return acc / n;
  }

  int accepts_in(long from_step, long to_step) const {
    int n = 0;
    for (const auto& a : accepts)
      if (a.step >= from_step && a.step < to_step) ++n;
    return n;
  }
};

// Heteroscedastic disturbance model over the planar position, retrained
// warm-started after every accepted measurement. Positions are mapped to
// arena units (edge/2 -> 1) before they reach the network or the epi
// sampler; gamma stays configured in raw meters squared.
class OnlineDisturbanceModel {
 public:
  OnlineDisturbanceModel(const ControllerConfig& cfg)
      : cfg_(cfg),
        input_scale_(2.0 / cfg.edge),
        params_(make_network(2, {50, 50}, 1, true, derive_seed(cfg.seed, "net"))),
        adam_(AdamState::zeros_like(params_)),
        sampler_([&] {
          SamplerConfig sc;
          sc.gamma = Vector::Constant(2, cfg.gamma * sq(2.0 / cfg.edge));
          sc.delta = cfg.delta;
          sc.seed = derive_seed(cfg.seed, "sampler");
          return sc;
        }()) {}

  int n_tr() const { return static_cast<int>(x_rows_.size()); }

  HeadOutputs predict(const Vec2& p) const {
    Vector x(2);
    x << p(0) * input_scale_, p(1) * input_scale_;
    return forward(params_, x);
  }

  double add_and_retrain(const Vec2& p, double y) {
    x_rows_.push_back(p * input_scale_);
    y_rows_.push_back(y);
    Matrix x_tr(n_tr(), 2), y_tr(n_tr(), 1);
    for (int i = 0; i < n_tr(); ++i) {
      x_tr.row(i) = x_rows_[i].transpose();
      y_tr(i, 0) = y_rows_[i];
    }
    sampler_.add_point(x_tr);
    TrainConfig tc;
    tc.epochs = cfg_.retrain_epochs;
    tc.learning_rate = cfg_.retrain_learning_rate;
    tc.lambda_epi = cfg_.lambda_epi;
    tc.mode = TrainMode::heteroscedastic;
    tc.seed = derive_seed(cfg_.seed, "retrain" + std::to_string(n_tr()));
    auto result = train(params_, x_tr, y_tr, sampler_.set().inputs,
                        sampler_.set().labels_vector(), tc, adam_);
    return result.loss_history.back();
  }

  const NetworkParams& params() const { return params_; }

 private:
  ControllerConfig cfg_;
  double input_scale_ = 1.0;
  NetworkParams params_;
  AdamState adam_;
  EpiSampler sampler_;
  std::vector<Vec2> x_rows_;
  std::vector<double> y_rows_;
};

// One full episode following the online learning loop. With the model
// disabled the controller still tracks but never compensates, adapts or
// measures. Pass an external model to inspect it after the run.
inline SimLog run_episode(const ControllerConfig& cfg, const ThermalField& field,
                          bool model_enabled,
                          OnlineDisturbanceModel* external_model = nullptr) {
  Rng rng_disturbance(derive_seed(cfg.seed, "disturbance"));
  Rng rng_gate(derive_seed(cfg.seed, "gate"));
  OnlineDisturbanceModel local_model(cfg);
  OnlineDisturbanceModel& model = external_model ? *external_model : local_model;

  SimState state;
  state.position = square_reference(cfg, 0).position;
  state.velocity = square_reference(cfg, 0).velocity;

  SimLog log;
  const long total_steps = static_cast<long>(cfg.laps) * cfg.steps_per_lap;
  log.rows.reserve(total_steps);

  for (long k = 0; k < total_steps; ++k) {
    const Reference ref = square_reference(cfg, k);

    double mu_hat = 0.0, sigma_hat = 0.0, eta = 0.0;
    if (model_enabled) {
      if (model.n_tr() > 0) {
        HeadOutputs h = model.predict(state.position.head<2>());
        mu_hat = h.mean(0);
        sigma_hat = h.scale(0);
        eta = h.eta;
      } else {
        eta = 1.0;  // empty training set forces a measurement
      }
    }

    const Vec3 gains = adapt_gains(cfg.k_bar, cfg.beta, sigma_hat, cfg.gain_on_stddev,
                                   cfg.max_gain_scale);
    const Vec3 u = feedback_control(state, ref, gains, mu_hat, cfg.dt);

    double y_k = 0.0;
    const Vec2 measured_at = state.position.head<2>();
    SimState next = step_dynamics(state, u, field, cfg.dt, rng_disturbance, &y_k);
    if (next.position.cwiseAbs().maxCoeff() > cfg.divergence_limit ||
        next.velocity.cwiseAbs().maxCoeff() > cfg.divergence_limit)
      throw SimDivergence("simulation diverged at step " + std::to_string(k) +
                          ", |state| exceeded " + fmt_double(cfg.divergence_limit));

    SimStepRow row;
    row.step = k;
    row.t = k * cfg.dt;
    row.position = state.position;
    row.reference = ref.position;
    row.control = u;
    row.mu_hat = mu_hat;
    row.sigma_hat = sigma_hat;
    row.eta = eta;
    row.k_zz = gains(2);
    row.n_tr = model.n_tr();
    row.disturbance = y_k;

    if (model_enabled && accept_measurement(eta, rng_gate)) {
      AcceptEvent ev;
      ev.step = k;
      ev.position = measured_at;
      ev.eta_before = eta;
      ev.retrain_loss = model.add_and_retrain(measured_at, y_k);
      ev.eta_after = model.predict(measured_at).eta;
      log.accepts.push_back(ev);
      row.accepted = true;
      row.n_tr = model.n_tr();
    }
    log.rows.push_back(row);
    state = next;
  }
  return log;
}

inline void write_simulation_csv(const SimLog& log, const std::string& path) {
  CsvWriter csv(path);
  csv.header({"t", "x", "y", "z", "z_des", "eta", "accepted", "n_tr", "k_zz"});
  for (const auto& r : log.rows)
    csv.row({r.t, r.position(0), r.position(1), r.position(2), r.reference(2), r.eta,
             static_cast<double>(r.accepted), static_cast<double>(r.n_tr), r.k_zz});
}

// Model and ground truth side by side over a grid spanning the arena.
inline void write_dmodel_csv(const OnlineDisturbanceModel& model,
                             const ThermalField& field, const std::string& path,
                             double half_extent = 0.08, int per_side = 41) {
  CsvWriter csv(path);
  csv.header({"x", "y", "mu_hat", "sigma_hat", "eta", "true_mu", "true_sigma"});
  for (int i = 0; i < per_side; ++i)
    for (int j = 0; j < per_side; ++j) {
      Vec2 p(-half_extent + 2.0 * half_extent * i / (per_side - 1),
             -half_extent + 2.0 * half_extent * j / (per_side - 1));
      HeadOutputs h = model.predict(p);
      const auto [mu, sigma] = field.eval(p);
      csv.row({p(0), p(1), h.mean(0), h.scale(0), h.eta, mu, sigma});
    }
}

}  // namespace sim
}  // namespace epiout
