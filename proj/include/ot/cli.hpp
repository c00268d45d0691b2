#pragma once

// The `ot` command-line program as a library function, so tests can drive it
// in-process. Exit codes: 0 ok, 2 validation error, 3 non-convergence.

#include "ot/divergences.hpp"
#include "ot/duality.hpp"
#include "ot/dynamics.hpp"
#include "ot/entropic.hpp"
#include "ot/exact.hpp"
#include "ot/gaussian.hpp"
#include "ot/io.hpp"
#include "ot/selftest.hpp"
#include "ot/semidiscrete.hpp"
#include "ot/w1.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

namespace ot::cli {

using io::Json;

enum ExitCode { kOk = 0, kInternal = 1, kValidation = 2, kNonConvergence = 3 };

namespace detail {

struct Output {
  Json config = Json::object();
  Json result = Json::object();
  std::vector<Json> stream;  // trace or trajectory records, one JSON line each
  std::string csv;           // empty when the command has no tabular form
  int exit_code = kOk;
};

inline Json error_json(const std::string& code, const std::string& message) {
  return Json{{"error", Json{{"code", code}, {"message", message}}}};
}

inline CostSpec parse_cost(const std::string& s) {
  if (s == "sqeuclidean") return CostSpec::sq_euclidean();
  if (s == "euclidean") return CostSpec::euclidean();
  if (s == "zero_one") return CostSpec::zero_one();
  if (s.rfind("p:", 0) == 0) {
    try {
      return CostSpec::p_power(std::stod(s.substr(2)));
    } catch (const std::logic_error&) {
    }
  }
  ot::detail::fail(ErrorCode::invalid_argument, "unknown cost '" + s + "' (sqeuclidean, euclidean, zero_one, p:<p>)");
}

inline double param(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::logic_error&) {
  }
  ot::detail::fail(ErrorCode::invalid_argument, "bad number for " + what + ": '" + text + "'");
}

template <class T>
T field(const Json& cfg, const char* key, T fallback) {
  if (!cfg.contains(key)) return fallback;
  try {
    return cfg.at(key).get<T>();
  } catch (const Json::exception&) {
    throw Error(ErrorCode::malformed_input, std::string("config field '") + key + "' has the wrong type");
  }
}

inline const Json& required_field(const Json& cfg, const char* key) {
  if (!cfg.is_object() || !cfg.contains(key))
    throw Error(ErrorCode::malformed_input, std::string("config is missing '") + key + "'");
  return cfg.at(key);
}

inline Json potentials_json(const DualPotentials& p) { return Json{{"f", io::to_json(p.f)}, {"g", io::to_json(p.g)}}; }

inline Json trajectory_line(double t, const Matrix& x) { return Json{{"t", t}, {"positions", io::to_json(x)}}; }

inline std::string trajectory_csv(const ParticleTrajectory& traj) {
  std::string s = "t,particle";
  const Index d = traj.states.front().cols();
  for (Index c = 0; c < d; ++c) s += ",x" + std::to_string(c);
  s += "\n";
  for (std::size_t k = 0; k < traj.times.size(); ++k)
    for (Index i = 0; i < traj.states[k].rows(); ++i) {
      s += io::shortest(traj.times[k]) + "," + std::to_string(i);
      for (Index c = 0; c < d; ++c) s += "," + io::shortest(traj.states[k](i, c));
      s += "\n";
    }
  return s;
}

inline void add_trajectory(Output& o, const ParticleTrajectory& traj) {
  Json times = Json::array(), states = Json::array();
  for (std::size_t k = 0; k < traj.times.size(); ++k) {
    times.push_back(traj.times[k]);
    states.push_back(io::to_json(traj.states[k]));
    Json line = trajectory_line(traj.times[k], traj.states[k]);
    if (k < traj.energy.size()) line["energy"] = traj.energy[k];
    o.stream.push_back(std::move(line));
  }
  o.result["times"] = std::move(times);
  o.result["states"] = std::move(states);
  o.result["weights"] = io::to_json(traj.weights);
  if (!traj.energy.empty()) o.result["energy"] = io::to_json(traj.energy);
  o.csv = trajectory_csv(traj);
}

// ---- subcommands ----

struct ExactArgs {
  std::string a, b, cost = "sqeuclidean";
};

inline Output run_exact(const ExactArgs& args) {
  Output o;
  o.config = Json{{"a", args.a}, {"b", args.b}, {"cost", args.cost}};
  const auto a = io::read_measure(args.a), b = io::read_measure(args.b);
  const Matrix c = build_cost_matrix(a, b, parse_cost(args.cost));
  const auto r = solve_kantorovich(a.weights(), b.weights(), c);
  o.result = Json{{"cost", r.cost},
                  {"plan", io::plan_to_json(r.coupling.plan())},
                  {"status", to_string(r.status)},
                  {"iterations", r.iterations}};
  if (r.potentials) {
    o.result["potentials"] = potentials_json(*r.potentials);
    o.result["duality_gap"] = duality_gap(r, c);
  }
  o.csv = io::plan_to_csv(r.coupling.plan());
  if (r.status != SolveStatus::optimal) o.exit_code = kNonConvergence;
  return o;
}

struct SinkhornArgs {
  std::string a, b, cost = "sqeuclidean", schedule;
  double epsilon = 0.1;
  long max_iter = 10000;
  double tol = 1e-8;
  bool scaling = false;
};

/// "e1,e2,..." or "geometric:<start>" (halving down to the target).
inline std::vector<double> parse_schedule(const std::string& s, double target) {
  if (s.empty()) return {};
  if (s.rfind("geometric:", 0) == 0) return geometric_schedule(param(s.substr(10), "schedule"), target);
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    out.push_back(param(s.substr(start, comma - start), "schedule"));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

inline Output run_sinkhorn(const SinkhornArgs& args) {
  Output o;
  o.config = Json{{"a", args.a},           {"b", args.b},     {"cost", args.cost},          {"epsilon", args.epsilon},
                  {"max_iter", args.max_iter}, {"tol", args.tol}, {"schedule", args.schedule}, {"log_domain", !args.scaling}};
  const auto a = io::read_measure(args.a), b = io::read_measure(args.b);
  SinkhornConfig cfg;
  cfg.epsilon = args.epsilon;
  cfg.max_iter = args.max_iter;
  cfg.marginal_tol = args.tol;
  cfg.log_domain = !args.scaling;
  cfg.epsilon_schedule = parse_schedule(args.schedule, args.epsilon);
  const auto r = sinkhorn(a, b, parse_cost(args.cost), cfg);
  o.result = Json{{"cost_reg", r.cost_reg},
                  {"cost_linear", r.cost_linear},
                  {"plan", io::plan_to_json(r.coupling.plan())},
                  {"potentials", Json{{"f", io::to_json(r.state.f)}, {"g", io::to_json(r.state.g)}}},
                  {"iterations", r.state.iteration},
                  {"status", to_string(r.state.status)},
                  {"violation", r.state.final_violation}};
  for (const auto& t : r.state.trace)
    o.stream.push_back(Json{{"iter", t.iter},
                            {"viol_a", t.viol_a},
                            {"viol_b", t.viol_b},
                            {"dual", t.dual},
                            {"hilbert_step", t.hilbert_step},
                            {"epsilon", t.epsilon}});
  o.csv = io::plan_to_csv(r.coupling.plan());
  if (r.state.status != SolveStatus::optimal) o.exit_code = kNonConvergence;
  return o;
}

struct GaussianArgs {
  std::string a, b;
};

inline Output run_gaussian(const GaussianArgs& args) {
  Output o;
  o.config = Json{{"a", args.a}, {"b", args.b}};
  const auto a = io::gaussian_from_json(io::read_json(args.a));
  const auto b = io::gaussian_from_json(io::read_json(args.b));
  const auto map = gaussian_monge_map(a, b);
  o.result = Json{{"w2_squared", gaussian_w2_squared(a, b)},
                  {"w2", gaussian_w2(a, b)},
                  {"bures_squared", bures_distance_squared(a.covariance(), b.covariance())},
                  {"mean_term", (a.mean() - b.mean()).squaredNorm()},
                  {"map", Json{{"matrix", io::to_json(map.a)},
                               {"source_mean", io::to_json(map.source_mean)},
                               {"target_mean", io::to_json(map.target_mean)}}}};
  return o;
}

struct SemidiscreteArgs {
  std::string targets, weights, sampler = "uniform_box";
  long iters = 10000;
  std::uint64_t seed = 0;
  double tau0 = 1.0, ell0 = 100.0;
  long holdout = 4000, trace_every = 100;
};

inline Sampler parse_sampler(const std::string& s, Index dim) {
  if (s == "uniform_box") return Sampler::uniform_box(Vector::Zero(dim), Vector::Ones(dim));
  if (s == "gaussian") return Sampler::gaussian(Vector::Zero(dim), Matrix::Identity(dim, dim));
  if (s.rfind("mixture:", 0) == 0) {
    const Json j = io::read_json(s.substr(8));
    std::vector<double> w;
    std::vector<Vector> means;
    std::vector<Matrix> covs;
    for (const auto& x : required_field(j, "weights")) w.push_back(x.get<double>());
    for (const auto& x : required_field(j, "means")) means.push_back(io::vector_from_json(x, "mixture mean"));
    for (const auto& x : required_field(j, "covariances")) covs.push_back(io::matrix_from_json(x, "mixture covariance"));
    return Sampler::mixture(w, means, covs);
  }
  ot::detail::fail(ErrorCode::invalid_argument, "unknown sampler '" + s + "' (uniform_box, gaussian, mixture:<file>)");
}

inline Output run_semidiscrete(const SemidiscreteArgs& args) {
  Output o;
  o.config = Json{{"targets", args.targets}, {"weights", args.weights}, {"sampler", args.sampler},
                  {"iters", args.iters},     {"seed", args.seed},       {"tau0", args.tau0},
                  {"ell0", args.ell0},       {"holdout", args.holdout}, {"trace_every", args.trace_every}};
  const auto targets = io::read_measure(args.targets);
  Vector b = targets.weights();
  if (!args.weights.empty()) b = io::vector_from_json(io::read_json(args.weights), "weights");
  const SemiDiscreteProblem p{parse_sampler(args.sampler, targets.dim()), targets.points(), b};
  SgdConfig cfg;
  cfg.n_iter = args.iters;
  cfg.seed = args.seed;
  cfg.tau0 = args.tau0;
  cfg.ell0 = args.ell0;
  cfg.holdout_samples = args.holdout;
  cfg.trace_every = args.trace_every;
  const auto r = sgd_solve(p, cfg);
  o.result = Json{{"g", io::to_json(r.g)}};
  if (!r.trace.empty()) o.result["marginal_error"] = r.trace.back().marginal_error;
  for (const auto& t : r.trace)
    o.stream.push_back(Json{{"iter", t.iter}, {"marginal_error", t.marginal_error}, {"tau", t.tau}});
  std::string csv = "j,g\n";
  for (Index j = 0; j < r.g.size(); ++j) csv += std::to_string(j) + "," + io::shortest(r.g[j]) + "\n";
  o.csv = csv;
  return o;
}

struct W1Args {
  std::string a, b, graph;
};

inline Output run_w1(const std::string& mode, const W1Args& args) {
  Output o;
  o.config = Json{{"mode", mode}};
  if (mode == "graph") {
    o.config["graph"] = args.graph;
    const auto g = io::graph_from_json(io::read_json(args.graph));
    const auto r = w1_graph_beckmann(g);
    o.result = Json{{"value", r.value}, {"edge_flows", io::to_json(r.edge_flows)}};
    return o;
  }
  o.config["a"] = args.a;
  o.config["b"] = args.b;
  const auto m = SignedDiscreteMeasure::difference(io::read_measure(args.a), io::read_measure(args.b));
  const auto r = mode == "kr" ? w1_kr_lp(m) : flat_norm(m);
  o.result = Json{{"value", r.value}, {"potential", io::to_json(r.f)}};
  return o;
}

struct DivergenceArgs {
  std::string a, b, phi, kernel;
};

inline Output run_divergence(const DivergenceArgs& args) {
  Output o;
  ot::detail::require(args.phi.empty() != args.kernel.empty(), ErrorCode::invalid_argument,
                      "divergence: give exactly one of --phi or --kernel");
  o.config = Json{{"a", args.a}, {"b", args.b}, {"phi", args.phi}, {"kernel", args.kernel}};
  const auto a = io::read_measure(args.a), b = io::read_measure(args.b);
  if (!args.phi.empty()) {
    o.result = Json{{"kind", args.phi}, {"value", phi_divergence(a, b, EntropyFunction::by_name(args.phi))}};
    return o;
  }
  const auto colon = args.kernel.find(':');
  const std::string name = args.kernel.substr(0, colon);
  const bool has_param = colon != std::string::npos;
  KernelSpec k;
  if (name == "gaussian") {
    k = KernelSpec::gaussian(has_param ? param(args.kernel.substr(colon + 1), "gaussian sigma") : 1.0);
  } else if (name == "energy") {
    k = KernelSpec::energy(has_param ? param(args.kernel.substr(colon + 1), "energy exponent") : 1.0);
  } else {
    ot::detail::fail(ErrorCode::invalid_argument, "unknown kernel '" + args.kernel + "' (gaussian:<sigma>, energy:<p>)");
  }
  o.result = Json{{"kind", "mmd_squared"}, {"value", mmd_squared(a, b, k)}};
  return o;
}

inline FunctionalSpec functional_from_config(const Json& cfg, Index dim) {
  const auto name = field<std::string>(cfg, "functional", "linear_quadratic");
  if (name == "linear_quadratic")
    return FunctionalSpec::linear(dim, [](const Vector& x) { return 0.5 * x.squaredNorm(); },
                                  [](const Vector& x) { return x; });
  if (name == "linear_quartic")
    return FunctionalSpec::linear(
        dim, [](const Vector& x) { return 0.5 * x.squaredNorm() + 0.25 * x.squaredNorm() * x.squaredNorm(); },
        [](const Vector& x) { return Vector((1.0 + x.squaredNorm()) * x); });
  if (name == "constant")
    return FunctionalSpec::linear(dim, [](const Vector&) { return 0.0; },
                                  [dim](const Vector&) { return Vector(Vector::Zero(dim)); });
  if (name == "interaction_quadratic")
    return FunctionalSpec::interaction(dim, [](const Vector& x, const Vector& y) { return 0.5 * (x - y).squaredNorm(); },
                                       [](const Vector& x, const Vector& y) { return Vector(x - y); });
  if (name == "interaction_gaussian") {
    const double s2 = std::pow(field<double>(cfg, "sigma", 1.0), 2);
    ot::detail::require(s2 > 0.0, ErrorCode::invalid_argument, "interaction_gaussian: sigma must be nonzero");
    return FunctionalSpec::interaction(
        dim, [s2](const Vector& x, const Vector& y) { return std::exp(-(x - y).squaredNorm() / (2 * s2)); },
        [s2](const Vector& x, const Vector& y) {
          return Vector(-std::exp(-(x - y).squaredNorm() / (2 * s2)) / s2 * (x - y));
        });
  }
  ot::detail::fail(ErrorCode::invalid_argument,
                   "unknown functional '" + name +
                       "' (linear_quadratic, linear_quartic, constant, interaction_quadratic, interaction_gaussian)");
}

inline Output run_flow(const std::string& mode, const std::string& config_path, std::optional<std::uint64_t> seed) {
  Output o;
  const Json cfg = io::read_json(config_path);
  ot::detail::require(cfg.is_object(), ErrorCode::malformed_input, "flow config must be a JSON object");
  o.config = Json{{"mode", mode}, {"config_file", config_path}, {"config", cfg}};
  if (seed) o.config["seed"] = *seed;

  if (mode == "gradient") {
    const Matrix x0 = io::matrix_from_json(required_field(cfg, "particles"), "particles");
    GradientFlowConfig gf;
    gf.dt = field<double>(cfg, "dt", gf.dt);
    gf.horizon = field<double>(cfg, "T", gf.horizon);
    gf.record_every = field<long>(cfg, "record_every", gf.record_every);
    gf.max_halvings = field<int>(cfg, "max_halvings", gf.max_halvings);
    const auto scheme = field<std::string>(cfg, "scheme", "explicit");
    if (scheme == "explicit") gf.scheme = FlowScheme::explicit_euler;
    else if (scheme == "rk4") gf.scheme = FlowScheme::explicit_rk4;
    else if (scheme == "implicit") gf.scheme = FlowScheme::implicit;
    else ot::detail::fail(ErrorCode::invalid_argument, "unknown scheme '" + scheme + "' (explicit, rk4, implicit)");
    const auto velocity = field<std::string>(cfg, "velocity", "particle_gradient");
    if (velocity == "wasserstein") gf.velocity = FlowVelocity::wasserstein;
    else if (velocity != "particle_gradient")
      ot::detail::fail(ErrorCode::invalid_argument, "unknown velocity '" + velocity + "' (particle_gradient, wasserstein)");
    const auto traj = gradient_flow(functional_from_config(cfg, x0.cols()), x0, gf);
    add_trajectory(o, traj);
    o.result["halvings"] = traj.halvings;
    return o;
  }

  if (mode == "entropy1d") {
    const auto rho0 = io::grid_from_json(required_field(cfg, "initial"));
    const auto name = field<std::string>(cfg, "entropy", "shannon");
    GeneralizedEntropy ent;
    if (name == "shannon") ent = GeneralizedEntropy::shannon();
    else if (name == "power") ent = GeneralizedEntropy::power(field<double>(cfg, "m", 2.0));
    else ot::detail::fail(ErrorCode::invalid_argument, "unknown entropy '" + name + "' (shannon, power)");
    EntropyFlowConfig ef;
    ef.dt = field<double>(cfg, "dt", ef.dt);
    ef.horizon = field<double>(cfg, "T", ef.horizon);
    ef.record_every = field<long>(cfg, "record_every", ef.record_every);
    const auto path = entropy_flow_1d(rho0, ent, ef);
    Json masses = Json::array(), densities = Json::array();
    std::string csv = "t,x,density\n";
    for (std::size_t k = 0; k < path.times.size(); ++k) {
      masses.push_back(path.at(k).total_mass());
      densities.push_back(io::to_json(path.densities[k]));
      o.stream.push_back(Json{{"t", path.times[k]}, {"density", io::to_json(path.densities[k])}});
      for (Index i = 0; i < path.grid.size(); ++i)
        csv += io::shortest(path.times[k]) + "," + io::shortest(path.grid[i]) + "," + io::shortest(path.densities[k][i]) + "\n";
    }
    o.result = Json{{"grid", io::to_json(path.grid)}, {"times", io::to_json(path.times)}, {"masses", masses},
                    {"densities", densities}};
    o.csv = csv;
    return o;
  }

  if (mode == "flowmatch") {
    const auto a = io::measure_from_json(required_field(cfg, "source"));
    const auto b = io::measure_from_json(required_field(cfg, "target"));
    const auto kind = field<std::string>(cfg, "coupling", "optimal");
    Matrix plan;
    if (kind == "optimal") plan = solve_kantorovich(a, b, CostSpec::sq_euclidean()).coupling.plan();
    else if (kind == "product") plan = a.weights() * b.weights().transpose();
    else if (kind == "paired") plan = CouplingPath::paired(a.points(), b.points(), a.weights()).plan;
    else ot::detail::fail(ErrorCode::invalid_argument, "unknown coupling '" + kind + "' (optimal, product, paired)");
    const CouplingPath path{a.points(), b.points(), plan};
    const double bandwidth = field<double>(cfg, "bandwidth", 1e-9);
    const Matrix x0 = cfg.contains("samples") ? io::matrix_from_json(cfg["samples"], "samples") : a.points();
    const auto traj = flow_match_trajectory(path, x0, field<double>(cfg, "dt", 0.01), bandwidth);
    add_trajectory(o, traj);
    o.result["plan"] = io::plan_to_json(plan);
    o.result["kinetic_energy"] = path_kinetic_energy(path, field<long>(cfg, "kinetic_steps", 16), bandwidth);
    return o;
  }

  if (mode == "transformer") {
    const Matrix x = io::matrix_from_json(required_field(cfg, "tokens"), "tokens");
    const AttentionParams p{io::matrix_from_json(required_field(cfg, "Q"), "Q"),
                            io::matrix_from_json(required_field(cfg, "K"), "K"),
                            io::matrix_from_json(required_field(cfg, "V"), "V")};
    add_trajectory(o, transformer_flow(x, p, field<long>(cfg, "depth", 10)));
    return o;
  }

  if (mode == "mlp") {
    ot::detail::require(seed.has_value() || cfg.contains("seed"), ErrorCode::invalid_argument,
                        "flow mlp: an explicit seed is required (--seed or \"seed\" in the config)");
    MlpFlowConfig mf;
    mf.seed = seed ? *seed : field<std::uint64_t>(cfg, "seed", 0);
    mf.n_neurons = field<Index>(cfg, "neurons", mf.n_neurons);
    mf.activation = activation_from_string(field<std::string>(cfg, "activation", to_string(mf.activation)));
    mf.dt = field<double>(cfg, "dt", mf.dt);
    mf.horizon = field<double>(cfg, "T", mf.horizon);
    mf.init_w_scale = field<double>(cfg, "init_w_scale", mf.init_w_scale);
    mf.init_a_scale = field<double>(cfg, "init_a_scale", mf.init_a_scale);
    const auto r = mlp_flow(io::matrix_from_json(required_field(cfg, "u"), "u"),
                            io::vector_from_json(required_field(cfg, "y"), "y"), mf);
    add_trajectory(o, r.trajectory);
    o.result["risk"] = io::to_json(r.risk);
    o.result["halvings"] = r.trajectory.halvings;
    return o;
  }
  ot::detail::fail(ErrorCode::invalid_argument, "unknown flow mode " + mode);
}

inline void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  ot::detail::require(static_cast<bool>(f), ErrorCode::invalid_argument, "cannot write " + path);
  f << text;
}

inline std::string jsonl(const std::vector<Json>& lines) {
  std::string s;
  for (const auto& l : lines) s += io::dump(l) + "\n";
  return s;
}

}  // namespace detail

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  using namespace detail;
  CLI::App app{"Optimal transport toolkit"};
  app.name("ot");
  app.require_subcommand(1);
  app.fallthrough();

  std::string out_path, trace_path, format = "json";
  app.add_option("--out", out_path, "write the result here instead of stdout");
  app.add_option("--trace", trace_path, "write trace or trajectory records here as JSON lines");
  auto* format_opt =
      app.add_option("--format", format, "json, jsonl or csv")->check(CLI::IsMember({"json", "jsonl", "csv"}));

  ExactArgs ex;
  auto* exact = app.add_subcommand("exact", "exact Kantorovich solve");
  exact->add_option("--a", ex.a)->required();
  exact->add_option("--b", ex.b)->required();
  exact->add_option("--cost", ex.cost);

  SinkhornArgs sk;
  auto* sink = app.add_subcommand("sinkhorn", "entropic transport");
  sink->add_option("--a", sk.a)->required();
  sink->add_option("--b", sk.b)->required();
  sink->add_option("--cost", sk.cost);
  sink->add_option("--epsilon", sk.epsilon);
  sink->add_option("--max-iter", sk.max_iter);
  sink->add_option("--tol", sk.tol);
  sink->add_option("--schedule", sk.schedule, "comma list of epsilons, or geometric:<start>");
  sink->add_flag("--scaling", sk.scaling, "iterate on scalings instead of log-domain potentials");

  GaussianArgs ga;
  auto* gauss = app.add_subcommand("gaussian", "closed-form W2 between Gaussians");
  gauss->add_option("--a", ga.a)->required();
  gauss->add_option("--b", ga.b)->required();

  SemidiscreteArgs sd;
  std::optional<std::uint64_t> sd_seed;
  auto* semi = app.add_subcommand("semidiscrete", "stochastic semi-discrete dual ascent");
  semi->add_option("--targets", sd.targets)->required();
  semi->add_option("--weights", sd.weights);
  semi->add_option("--sampler", sd.sampler, "uniform_box, gaussian or mixture:<file>");
  semi->add_option("--iters", sd.iters);
  semi->add_option("--seed", sd_seed)->required();
  semi->add_option("--tau0", sd.tau0);
  semi->add_option("--ell0", sd.ell0);
  semi->add_option("--holdout", sd.holdout);
  semi->add_option("--trace-every", sd.trace_every);

  W1Args w1a;
  auto* w1 = app.add_subcommand("w1", "W1 as a dual norm");
  w1->require_subcommand(1);
  auto* w1_kr = w1->add_subcommand("kr", "Kantorovich-Rubinstein norm of a - b");
  auto* w1_flat = w1->add_subcommand("flat", "flat norm of a - b");
  for (auto* s : {w1_kr, w1_flat}) {
    s->add_option("--a", w1a.a)->required();
    s->add_option("--b", w1a.b)->required();
  }
  auto* w1_graph = w1->add_subcommand("graph", "Beckmann flow on a weighted graph");
  w1_graph->add_option("--graph", w1a.graph)->required();

  DivergenceArgs dv;
  auto* div = app.add_subcommand("divergence", "phi-divergence or MMD");
  div->add_option("--a", dv.a)->required();
  div->add_option("--b", dv.b)->required();
  div->add_option("--phi", dv.phi, "kl, tv or chi2");
  div->add_option("--kernel", dv.kernel, "gaussian:<sigma> or energy:<p>");

  std::string flow_config;
  std::optional<std::uint64_t> flow_seed;
  auto* flow = app.add_subcommand("flow", "evolutions of measures");
  flow->require_subcommand(1);
  std::vector<CLI::App*> flow_modes;
  const std::pair<const char*, const char*> modes[] = {
      {"gradient", "particle gradient flow of a potential or interaction energy"},
      {"entropy1d", "1-D nonlinear diffusion on a grid"},
      {"flowmatch", "flow matching along a coupling"},
      {"transformer", "attention layers as a particle flow"},
      {"mlp", "mean-field training of a two-layer network"}};
  for (const auto& [mode, help] : modes) {
    auto* s = flow->add_subcommand(mode, help);
    s->add_option("--config", flow_config, "JSON configuration file")->required();
    s->add_option("--seed", flow_seed);
    flow_modes.push_back(s);
  }

  std::uint64_t selftest_seed = 0;
  auto* self = app.add_subcommand("selftest", "run the invariant suite");
  self->add_option("--seed", selftest_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    err << io::dump(error_json("usage", e.what())) << "\n";
    return kValidation;
  }

  try {
    std::string threads = "1";
    if (const char* env = std::getenv("OT_THREADS")) {
      threads = env;
      ot::detail::require(param(threads, "OT_THREADS") >= 1.0, ErrorCode::invalid_argument, "OT_THREADS must be >= 1");
    }

    Output o;
    std::string command;
    if (self->parsed()) {
      command = "selftest";
      const auto cases = run_selftest(selftest_seed);
      bool all = true;
      Json list = Json::array();
      for (const auto& c : cases) {
        all = all && c.passed;
        list.push_back(Json{{"name", c.name}, {"value", c.value}, {"tolerance", c.tolerance}, {"passed", c.passed}});
      }
      const int code = all ? kOk : kValidation;
      if (format_opt->count() == 0) {
        emit(format_selftest(cases) + (all ? "selftest: all passed\n" : "selftest: FAILURES\n"), out_path, out);
        return code;
      }
      o.config = Json{{"seed", selftest_seed}};
      o.result = Json{{"cases", list}, {"passed", all}};
      o.exit_code = code;
    } else if (exact->parsed()) {
      command = "exact";
      o = run_exact(ex);
    } else if (sink->parsed()) {
      command = "sinkhorn";
      o = run_sinkhorn(sk);
    } else if (gauss->parsed()) {
      command = "gaussian";
      o = run_gaussian(ga);
    } else if (semi->parsed()) {
      command = "semidiscrete";
      sd.seed = *sd_seed;
      o = run_semidiscrete(sd);
    } else if (w1->parsed()) {
      command = "w1";
      o = run_w1(w1_kr->parsed() ? "kr" : w1_flat->parsed() ? "flat" : "graph", w1a);
    } else if (div->parsed()) {
      command = "divergence";
      o = run_divergence(dv);
    } else {
      command = "flow";
      std::string mode;
      for (auto* s : flow_modes)
        if (s->parsed()) mode = s->get_name();
      o = run_flow(mode, flow_config, flow_seed);
    }
    o.config["command"] = command;
    o.config["threads"] = threads;
    o.config["format"] = format;

    const Json doc{{"config", o.config}, {"version", kVersion}, {"result", o.result}};
    if (!trace_path.empty()) emit(jsonl(o.stream), trace_path, out);
    if (format == "json") {
      emit(io::dump(doc) + "\n", out_path, out);
    } else if (format == "jsonl") {
      Json header = doc;
      header["result"].erase("states");
      header["result"].erase("densities");
      std::vector<Json> lines{header};
      lines.insert(lines.end(), o.stream.begin(), o.stream.end());
      emit(jsonl(lines), out_path, out);
    } else {
      ot::detail::require(!o.csv.empty(), ErrorCode::invalid_argument, command + ": no csv form for this output");
      emit(o.csv, out_path, out);
    }
    return o.exit_code;
  } catch (const FeasibilityViolation& e) {
    Json j = error_json(to_string(e.code()), e.what());
    j["error"]["witness"] = Json{{"i", e.i()}, {"j", e.j()}, {"excess", e.excess()}};
    err << io::dump(j) << "\n";
    return kValidation;
  } catch (const AxiomViolation& e) {
    Json j = error_json(to_string(e.code()), e.what());
    j["error"]["witness"] = Json{{"i", e.i()}, {"j", e.j()}, {"k", e.k()}};
    err << io::dump(j) << "\n";
    return kValidation;
  } catch (const Error& e) {
    err << io::dump(error_json(to_string(e.code()), e.what())) << "\n";
    return e.code() == ErrorCode::non_convergence ? kNonConvergence : kValidation;
  } catch (const Json::exception& e) {
    err << io::dump(error_json("malformed_input", e.what())) << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    err << io::dump(error_json("internal", e.what())) << "\n";
    return kInternal;
  }
}

}  // namespace ot::cli
