#include "sbmhe/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <random>
#include <set>
#include <thread>

namespace fs = std::filesystem;

namespace sbmhe {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t item) {
  return splitmix64(splitmix64(base ^ (0x5851F42D4C957F2Dull * (stream + 1))) + item);
}

double unit_draw(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

Vector draw_in_box(const Box& box, std::mt19937_64& rng) {
  Vector x(box.dim());
  for (Index i = 0; i < x.size(); ++i)
    x[i] = box.lower()[i] + unit_draw(rng) * (box.upper()[i] - box.lower()[i]);
  return x;
}

void reject_unknown_keys(const Json& j, std::initializer_list<const char*> known,
                         const std::string& parent) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known)
      if (it.key() == k) ok = true;
    if (!ok) throw ConfigError(parent + "." + it.key() + ": unknown field");
  }
}

// Runs fn(0..count-1) on a small pool; results must be written into
// index-addressed slots so the outcome is identical for any worker count.
void parallel_for(int count, int workers, const std::function<void(int)>& fn) {
  workers = std::max(1, std::min(workers, count));
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto body = [&] {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int t = 0; t < workers; ++t) pool.emplace_back(body);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

class CsvWriter {
 public:
  explicit CsvWriter(std::string header) { buffer_ = std::move(header) + "\n"; }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) buffer_ += ',';
      buffer_ += cells[i];
    }
    buffer_ += '\n';
  }

  void save(const fs::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << buffer_;
  }

 private:
  std::string buffer_;
};

std::string cell(double v) { return format_double(v); }
std::string cell(int v) { return std::to_string(v); }
std::string cell(Index v) { return std::to_string(v); }

void write_json_file(const fs::path& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

std::vector<std::string> numbered(const char* stem, Index n) {
  std::vector<std::string> names;
  for (Index i = 1; i <= n; ++i) names.push_back(std::string(stem) + "_" + std::to_string(i));
  return names;
}

std::string join_header(const std::vector<std::vector<std::string>>& groups) {
  std::string h;
  for (const auto& g : groups)
    for (const auto& name : g) {
      if (!h.empty()) h += ',';
      h += name;
    }
  return h;
}

// --- section parsers -------------------------------------------------------

void parse_model(const Json& j, ExperimentConfig& cfg) {
  reject_unknown_keys(j, {"type", "A", "B", "C", "D", "state_bounds", "disturbance_bounds",
                          "noise_bounds"},
                      "model");
  std::string type = require_field(j, "type", "model").get<std::string>();
  cfg.model_type = type;
  if (type == "benchmark6d") {
    if (j.size() != 1)
      throw ConfigError("model: benchmark6d takes no further fields");
    return;
  }
  if (type != "linear")
    throw ConfigError("model.type: expected \"linear\" or \"benchmark6d\"");

  Matrix A = matrix_from_json(require_field(j, "A", "model"), "model.A");
  Matrix C = matrix_from_json(require_field(j, "C", "model"), "model.C");
  if (A.rows() != A.cols()) throw ConfigError("model.A: must be square");
  if (C.cols() != A.rows()) throw ConfigError("model.C: column count must match model.A");
  Matrix B = j.contains("B") && !j["B"].is_null()
                 ? matrix_from_json(j["B"], "model.B")
                 : Matrix::Zero(A.rows(), 0);
  Matrix D = j.contains("D") && !j["D"].is_null()
                 ? matrix_from_json(j["D"], "model.D")
                 : Matrix::Zero(C.rows(), B.cols());
  try {
    cfg.linear = LinearSystemModel{A, B, C, D};
  } catch (const std::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  if (j.contains("state_bounds"))
    cfg.state_bounds = box_from_json(j["state_bounds"], A.rows(), "model.state_bounds");
  if (j.contains("disturbance_bounds"))
    cfg.disturbance_bounds =
        box_from_json(j["disturbance_bounds"], A.rows(), "model.disturbance_bounds");
  if (j.contains("noise_bounds"))
    cfg.noise_bounds = box_from_json(j["noise_bounds"], C.rows(), "model.noise_bounds");
}

void parse_sim(const Json& j, ExperimentConfig& cfg, Json& norm) {
  reject_unknown_keys(j, {"dt", "t_end", "x0", "input", "noise"}, "sim");
  cfg.has_sim = true;
  cfg.dt = number_from_json(require_field(j, "dt", "sim"), "sim.dt");
  if (!(cfg.dt > 0.0)) throw ConfigError("sim.dt: must be positive");
  cfg.t_end = number_from_json(require_field(j, "t_end", "sim"), "sim.t_end");
  if (cfg.t_end < 0.0) throw ConfigError("sim.t_end: must be nonnegative");
  if (!grid_aligned(cfg.t_end, cfg.dt))
    throw ConfigError("sim.t_end: must be a whole number of dt steps");
  if (j.contains("x0") && !j["x0"].is_null()) cfg.x0 = vector_from_json(j["x0"], "sim.x0");
  if (j.contains("input") && !j["input"].is_null()) {
    const Json& u = j["input"];
    reject_unknown_keys(u, {"constant"}, "sim.input");
    cfg.u_constant = vector_from_json(require_field(u, "constant", "sim.input"),
                                      "sim.input.constant");
  }
  if (j.contains("noise") && !j["noise"].is_null()) {
    const Json& nz = j["noise"];
    reject_unknown_keys(nz, {"seed"}, "sim.noise");
    cfg.noise = true;
    cfg.noise_seed = nz.contains("seed")
                         ? static_cast<std::uint64_t>(
                               integer_from_json(nz["seed"], "sim.noise.seed"))
                         : cfg.seed;
    norm["sim"]["noise"]["seed"] = cfg.noise_seed;
  }
}

void parse_schedule(const Json& j, ExperimentConfig& cfg, Json& norm) {
  int forms = static_cast<int>(j.contains("instants")) + static_cast<int>(j.contains("gaps")) +
              static_cast<int>(j.contains("generator"));
  if (forms != 1)
    throw ConfigError("schedule: give exactly one of instants, gaps, generator");
  cfg.has_schedule = true;
  cfg.schedule_raw = j;

  if (j.contains("instants")) {
    reject_unknown_keys(j, {"instants"}, "schedule");
    Vector v = vector_from_json(j["instants"], "schedule.instants");
    cfg.schedule_instants.assign(v.data(), v.data() + v.size());
    for (std::size_t k = 0; k < cfg.schedule_instants.size(); ++k) {
      if (cfg.schedule_instants[k] < 0.0)
        throw ConfigError("schedule.instants[" + std::to_string(k) + "]: must be nonnegative");
      if (k > 0 && !(cfg.schedule_instants[k] > cfg.schedule_instants[k - 1]))
        throw ConfigError("schedule.instants[" + std::to_string(k) +
                          "]: instants must strictly increase");
    }
    return;
  }

  if (j.contains("gaps")) {
    reject_unknown_keys(j, {"gaps", "index"}, "schedule");
    Vector gv = vector_from_json(j["gaps"], "schedule.gaps");
    int index = 1;
    if (j.contains("index")) index = static_cast<int>(integer_from_json(j["index"], "schedule.index"));
    norm["schedule"]["index"] = index;
    cfg.schedule_raw["index"] = index;
    std::vector<double> gaps(gv.data(), gv.data() + gv.size());
    try {
      SamplingSchedule sched(gaps);
      cfg.schedule_instants = sched.instants(index, 0.0, sched.coverage(index));
    } catch (const std::exception& e) {
      throw ConfigError(std::string("schedule.gaps: ") + e.what());
    }
    return;
  }

  const Json& gen = j["generator"];
  reject_unknown_keys(gen, {"mean_gap", "jitter", "count", "seed"}, "schedule.generator");
  double mean = number_from_json(require_field(gen, "mean_gap", "schedule.generator"),
                                 "schedule.generator.mean_gap");
  if (!(mean > 0.0)) throw ConfigError("schedule.generator.mean_gap: must be positive");
  double jitter = 0.5;
  if (gen.contains("jitter"))
    jitter = number_from_json(gen["jitter"], "schedule.generator.jitter");
  if (jitter < 0.0 || jitter >= 1.0)
    throw ConfigError("schedule.generator.jitter: must lie in [0, 1)");
  Index count = integer_from_json(require_field(gen, "count", "schedule.generator"),
                                  "schedule.generator.count");
  if (count < 0) throw ConfigError("schedule.generator.count: must be nonnegative");
  std::uint64_t seed = gen.contains("seed")
                           ? static_cast<std::uint64_t>(
                                 integer_from_json(gen["seed"], "schedule.generator.seed"))
                           : cfg.seed;
  norm["schedule"]["generator"]["jitter"] = jitter;
  norm["schedule"]["generator"]["seed"] = seed;
  cfg.schedule_raw = norm["schedule"];

  if (!cfg.has_sim)
    throw ConfigError("schedule.generator: needs the sim section (instants snap to its grid)");
  std::mt19937_64 rng(seed);
  double t = 0.0;
  Index prev_node = -1;
  for (Index i = 0; i < count; ++i) {
    t += mean * (1.0 - jitter + 2.0 * jitter * unit_draw(rng));
    Index node = static_cast<Index>(std::llround(t / cfg.dt));
    if (node <= prev_node) node = prev_node + 1;  // keep instants distinct after snapping
    prev_node = node;
    cfg.schedule_instants.push_back(static_cast<double>(node) * cfg.dt);
  }
}

void parse_estimator(const Json& j, ExperimentConfig& cfg) {
  reject_unknown_keys(j, {"horizon", "eta", "P2", "Qw", "Qv", "R", "P1", "x0_hat", "solver",
                          "bound_rate", "state_scale"},
                      "estimator");
  cfg.has_estimator = true;

  double horizon = number_from_json(require_field(j, "horizon", "estimator"), "estimator.horizon");
  double eta = number_from_json(require_field(j, "eta", "estimator"), "estimator.eta");
  auto norm_of = [&](const char* key) {
    Matrix m = matrix_from_json(require_field(j, key, "estimator"),
                                std::string("estimator.") + key);
    try {
      return WeightedNorm(m);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("estimator.") + key + ": " + e.what());
    }
  };
  SolverOptions solver;
  if (j.contains("solver")) {
    const Json& s = j["solver"];
    reject_unknown_keys(s, {"max_iterations", "gradient_tolerance", "step_tolerance",
                            "cost_tolerance", "damping_init", "fd_step"},
                        "estimator.solver");
    if (s.contains("max_iterations"))
      solver.max_iterations =
          static_cast<int>(integer_from_json(s["max_iterations"], "estimator.solver.max_iterations"));
    if (s.contains("gradient_tolerance"))
      solver.gradient_tolerance =
          number_from_json(s["gradient_tolerance"], "estimator.solver.gradient_tolerance");
    if (s.contains("step_tolerance"))
      solver.step_tolerance = number_from_json(s["step_tolerance"], "estimator.solver.step_tolerance");
    if (s.contains("cost_tolerance"))
      solver.cost_tolerance = number_from_json(s["cost_tolerance"], "estimator.solver.cost_tolerance");
    if (s.contains("damping_init"))
      solver.damping_init = number_from_json(s["damping_init"], "estimator.solver.damping_init");
    if (s.contains("fd_step"))
      solver.fd_step = number_from_json(s["fd_step"], "estimator.solver.fd_step");
  }
  std::optional<Vector> scale;
  if (j.contains("state_scale"))
    scale = vector_from_json(j["state_scale"], "estimator.state_scale");
  cfg.estimator = MheConfig{horizon, eta,        norm_of("P2"), norm_of("Qw"),
                            norm_of("Qv"), norm_of("R"), cfg.dt,        solver,
                            scale};
  if (j.contains("x0_hat")) cfg.x0_hat = vector_from_json(j["x0_hat"], "estimator.x0_hat");
  if (j.contains("P1")) {
    Matrix p1 = matrix_from_json(j["P1"], "estimator.P1");
    try {
      WeightedNorm probe(p1);
      (void)probe;
    } catch (const std::exception& e) {
      throw ConfigError(std::string("estimator.P1: ") + e.what());
    }
    cfg.P1 = p1;
  }
  if (j.contains("bound_rate")) {
    cfg.bound_rate = number_from_json(j["bound_rate"], "estimator.bound_rate");
    if (!(cfg.bound_rate > 0.0)) throw ConfigError("estimator.bound_rate: must be positive");
  }
}

void parse_analysis(const Json& j, ExperimentConfig& cfg, Json& norm) {
  reject_unknown_keys(j, {"window", "epsilon", "margin", "windows"}, "analysis");
  cfg.has_analysis = true;
  cfg.window = number_from_json(require_field(j, "window", "analysis"), "analysis.window");
  if (!(cfg.window > 0.0)) throw ConfigError("analysis.window: must be positive");
  cfg.epsilon = number_from_json(require_field(j, "epsilon", "analysis"), "analysis.epsilon");
  if (!(cfg.epsilon > 0.0)) throw ConfigError("analysis.epsilon: must be positive");
  cfg.margin = j.contains("margin") ? number_from_json(j["margin"], "analysis.margin") : 0.5;
  if (!(cfg.margin > 0.0)) throw ConfigError("analysis.margin: must be positive");
  cfg.window_count =
      j.contains("windows") ? static_cast<int>(integer_from_json(j["windows"], "analysis.windows"))
                            : 50;
  if (cfg.window_count < 1) throw ConfigError("analysis.windows: must be at least 1");
  norm["analysis"]["margin"] = cfg.margin;
  norm["analysis"]["windows"] = cfg.window_count;
}

void parse_certificates(const Json& j, ExperimentConfig& cfg, Json& norm) {
  reject_unknown_keys(j, {"pairs", "seed", "t_end", "dt", "params", "region", "check", "t_star",
                          "gains"},
                      "certificates");
  cfg.has_certificates = true;
  cfg.pair_count =
      static_cast<int>(integer_from_json(require_field(j, "pairs", "certificates"),
                                         "certificates.pairs"));
  if (cfg.pair_count < 0) throw ConfigError("certificates.pairs: must be nonnegative");
  cfg.pair_seed = j.contains("seed") ? static_cast<std::uint64_t>(
                                           integer_from_json(j["seed"], "certificates.seed"))
                                     : cfg.seed;
  norm["certificates"]["seed"] = cfg.pair_seed;
  cfg.pair_t_end =
      number_from_json(require_field(j, "t_end", "certificates"), "certificates.t_end");
  if (!(cfg.pair_t_end > 0.0)) throw ConfigError("certificates.t_end: must be positive");
  if (j.contains("dt")) {
    double dt = number_from_json(j["dt"], "certificates.dt");
    if (!(dt > 0.0)) throw ConfigError("certificates.dt: must be positive");
    if (!cfg.has_sim) {
      cfg.dt = dt;
    } else if (std::abs(dt - cfg.dt) > 1e-12 * cfg.dt) {
      throw ConfigError("certificates.dt: conflicts with sim.dt");
    }
  } else if (!cfg.has_sim) {
    throw ConfigError("certificates.dt: missing (and no sim section to inherit from)");
  }
  if (!grid_aligned(cfg.pair_t_end, cfg.dt))
    throw ConfigError("certificates.t_end: must be a whole number of dt steps");

  cfg.check_kind = "exponential";
  if (j.contains("check")) {
    if (!j["check"].is_string())
      throw ConfigError("certificates.check: expected a string");
    cfg.check_kind = j["check"].get<std::string>();
    if (cfg.check_kind != "exponential" && cfg.check_kind != "sufficient")
      throw ConfigError("certificates.check: expected \"exponential\" or \"sufficient\"");
  }
  norm["certificates"]["check"] = cfg.check_kind;

  if (j.contains("params")) {
    const Json& params = j["params"];
    if (params.is_string() && params.get<std::string>() == "derived") {
      cfg.derived_params = true;
    } else if (params.is_object()) {
      reject_unknown_keys(params, {"P1", "P2", "Qw", "Qv", "R", "eta"}, "certificates.params");
      auto norm_of = [&](const char* key) {
        Matrix m = matrix_from_json(require_field(params, key, "certificates.params"),
                                    std::string("certificates.params.") + key);
        try {
          return WeightedNorm(m);
        } catch (const std::exception& e) {
          throw ConfigError(std::string("certificates.params.") + key + ": " + e.what());
        }
      };
      double eta = number_from_json(require_field(params, "eta", "certificates.params"),
                                    "certificates.params.eta");
      if (!(eta > 0.0)) throw ConfigError("certificates.params.eta: must be positive");
      cfg.explicit_params = ExponentialIiossParams{norm_of("P1"), norm_of("P2"), norm_of("Qw"),
                                                   norm_of("Qv"), norm_of("R"), eta};
    } else {
      throw ConfigError("certificates.params: expected \"derived\" or a parameter object");
    }
  } else if (cfg.check_kind == "exponential") {
    throw ConfigError("certificates.params: missing required field");
  }

  if (j.contains("region")) {
    // Dimension is model-dependent; allow either builtin.
    Index dim = cfg.model_type == "benchmark6d" ? 6 : cfg.linear->A.rows();
    cfg.pair_region = box_from_json(j["region"], dim, "certificates.region");
    if (!cfg.pair_region->is_bounded())
      throw ConfigError("certificates.region: must be bounded");
  }

  if (cfg.check_kind == "sufficient") {
    const Json& g = require_field(j, "gains", "certificates");
    reject_unknown_keys(g, {"gamma_y", "gamma_v", "alpha_w", "alpha_y", "alpha_v"},
                        "certificates.gains");
    auto coeff = [&](const char* key) {
      double c = number_from_json(require_field(g, key, "certificates.gains"),
                                  std::string("certificates.gains.") + key);
      if (c < 0.0) throw ConfigError(std::string("certificates.gains.") + key +
                                     ": must be nonnegative");
      return c;
    };
    cfg.g_y = coeff("gamma_y");
    cfg.g_v = coeff("gamma_v");
    cfg.a_w = coeff("alpha_w");
    cfg.a_y = coeff("alpha_y");
    cfg.a_v = coeff("alpha_v");
    cfg.t_star = number_from_json(require_field(j, "t_star", "certificates"),
                                  "certificates.t_star");
    if (cfg.t_star < 0.0 || cfg.t_star > cfg.pair_t_end)
      throw ConfigError("certificates.t_star: must lie in [0, t_end]");
  }
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

SystemModel ExperimentConfig::build_model() const {
  if (model_type == "benchmark6d") return make_benchmark6d().model;
  SystemModel sys = linear->to_system();
  if (state_bounds) sys.state_box = *state_bounds;
  if (disturbance_bounds) sys.disturbance_box = *disturbance_bounds;
  if (noise_bounds) sys.noise_box = *noise_bounds;
  return sys;
}

Json ExperimentConfig::to_json() const { return normalized; }

ExperimentConfig parse_config(const Json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  reject_unknown_keys(j, {"model", "schedule", "sim", "estimator", "analysis", "certificates",
                          "seed", "out_dir"},
                      "config");
  ExperimentConfig cfg;
  Json norm = j;
  cfg.seed = j.contains("seed")
                 ? static_cast<std::uint64_t>(integer_from_json(j["seed"], "seed"))
                 : 0;
  norm["seed"] = cfg.seed;
  if (j.contains("out_dir")) {
    if (!j["out_dir"].is_string()) throw ConfigError("out_dir: expected a string");
    cfg.out_dir = j["out_dir"].get<std::string>();
  }
  norm["out_dir"] = cfg.out_dir;

  parse_model(require_field(j, "model", "config"), cfg);
  if (j.contains("sim")) parse_sim(j["sim"], cfg, norm);
  if (j.contains("schedule")) parse_schedule(j["schedule"], cfg, norm);
  if (j.contains("estimator")) parse_estimator(j["estimator"], cfg);
  if (j.contains("analysis")) parse_analysis(j["analysis"], cfg, norm);
  if (j.contains("certificates")) parse_certificates(j["certificates"], cfg, norm);

  if (cfg.model_type == "linear" && cfg.has_sim && !cfg.x0)
    throw ConfigError("sim.x0: required for linear models");
  if (cfg.model_type == "linear" && cfg.has_estimator && !cfg.x0_hat)
    throw ConfigError("estimator.x0_hat: required for linear models");
  if (cfg.has_sim && cfg.u_constant) {
    Index m = cfg.model_type == "benchmark6d" ? 0 : cfg.linear->B.cols();
    if (cfg.u_constant->size() != m)
      throw ConfigError("sim.input.constant: expected " + std::to_string(m) + " entries");
  }

  cfg.normalized = std::move(norm);
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError("config: invalid JSON in " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

namespace {

// --- shared command plumbing ------------------------------------------------

struct RunContext {
  ExperimentConfig cfg;
  fs::path out;
  std::uint64_t seed = 0;
  bool quiet = false;
  std::vector<std::string> artifacts;
};

RunContext make_context(const CliOptions& opt) {
  RunContext ctx;
  ctx.cfg = load_config(opt.config_path);
  ctx.out = opt.out_dir.empty() ? fs::path(ctx.cfg.out_dir) : fs::path(opt.out_dir);
  ctx.seed = opt.seed ? *opt.seed : ctx.cfg.seed;
  ctx.quiet = opt.quiet;
  fs::create_directories(ctx.out);
  return ctx;
}

void write_sidecar(RunContext& ctx, const char* command, Json extra = Json::object()) {
  Json side;
  side["command"] = command;
  side["version"] = kVersion;
  side["seed"] = ctx.seed;
  side["config_hash"] = json_digest(ctx.cfg.to_json());
  side["outputs"] = ctx.artifacts;
  for (auto it = extra.begin(); it != extra.end(); ++it) side[it.key()] = *it;
  write_json_file(ctx.out / "run.json", side);
}

void note(const RunContext& ctx, const std::string& line) {
  if (!ctx.quiet) std::cout << line << "\n";
}

struct SimData {
  SystemModel model;
  Vector x0;
  Signal u, w, v;
  Trajectory truth;
  std::vector<double> instants;  // clipped to [0, t_end], grid-aligned
};

// Builds truth + noise + clipped instants for simulate/estimate.
SimData prepare_sim(const RunContext& ctx) {
  const ExperimentConfig& cfg = ctx.cfg;
  if (!cfg.has_sim) throw ConfigError("sim: section required for this command");
  if (!cfg.has_schedule) throw ConfigError("schedule: section required for this command");

  SimData data{cfg.build_model()};
  const Benchmark6d bench = cfg.model_type == "benchmark6d" ? make_benchmark6d() : Benchmark6d{data.model};
  data.x0 = cfg.x0 ? *cfg.x0 : bench.x0_true;
  if (data.x0.size() != data.model.state_dim)
    throw ConfigError("sim.x0: expected " + std::to_string(data.model.state_dim) + " entries");

  Index cells = std::max<Index>(grid_node(cfg.t_end, cfg.dt), 1);
  data.u = cfg.u_constant ? Signal::constant(*cfg.u_constant, cfg.dt, cells)
                          : Signal::zero(data.model.input_dim, cfg.dt, cells);
  if (cfg.noise) {
    if (!data.model.disturbance_box.is_bounded())
      throw ConfigError("sim.noise: disturbance bounds must be bounded to draw noise");
    if (!data.model.noise_box.is_bounded())
      throw ConfigError("sim.noise: measurement-noise bounds must be bounded to draw noise");
    data.w = generate_noise(data.model.disturbance_box, cfg.dt, cells,
                            derive_seed(ctx.seed, 1, 0));
    data.v = generate_noise(data.model.noise_box, cfg.dt, cells, derive_seed(ctx.seed, 2, 0));
  } else {
    data.w = Signal::zero(data.model.disturbance_dim, cfg.dt, cells);
    data.v = Signal::zero(data.model.noise_dim, cfg.dt, cells);
  }
  data.truth = integrate(data.model, data.x0, data.u, data.w, cfg.t_end, cfg.dt);

  for (std::size_t k = 0; k < cfg.schedule_instants.size(); ++k) {
    double tau = cfg.schedule_instants[k];
    if (tau > cfg.t_end + 1e-9 * cfg.dt) break;  // instants are sorted
    if (!grid_aligned(tau, cfg.dt))
      throw ConfigError("schedule.instants[" + std::to_string(k) +
                        "]: not on the sim.dt grid");
    data.instants.push_back(tau);
  }
  return data;
}

Vector noisy_output(const SimData& data, double t) {
  return data.model.output(data.truth.state_at(t), data.u.at(t), data.v.at(t));
}

int guarded(const CliOptions& opt, const std::function<int(RunContext&)>& body) {
  try {
    RunContext ctx = make_context(opt);
    return body(ctx);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int cmd_simulate(const CliOptions& opt) {
  return guarded(opt, [](RunContext& ctx) {
    SimData data = prepare_sim(ctx);
    const Trajectory& truth = data.truth;
    const Index n = data.model.state_dim, p = data.model.output_dim;

    CsvWriter traj(join_header({{"time"}, numbered("x", n), numbered("y", p)}));
    for (Index k = 0; k < truth.node_count(); ++k) {
      std::vector<std::string> row{cell(truth.times[static_cast<std::size_t>(k)])};
      const Vector& x = truth.states[static_cast<std::size_t>(k)];
      const Vector& y = truth.outputs[static_cast<std::size_t>(k)];
      for (Index i = 0; i < n; ++i) row.push_back(cell(x[i]));
      for (Index i = 0; i < p; ++i) row.push_back(cell(y[i]));
      traj.row(row);
    }
    traj.save(ctx.out / "trajectory.csv");
    ctx.artifacts.push_back("trajectory.csv");

    CsvWriter dense(join_header({{"time"}, numbered("y", p)}));
    for (Index k = 0; k < truth.node_count(); ++k) {
      double t = truth.times[static_cast<std::size_t>(k)];
      Vector y = noisy_output(data, t);
      std::vector<std::string> row{cell(t)};
      for (Index i = 0; i < p; ++i) row.push_back(cell(y[i]));
      dense.row(row);
    }
    dense.save(ctx.out / "outputs.csv");
    ctx.artifacts.push_back("outputs.csv");

    CsvWriter samples(join_header({{"time"}, numbered("y", p)}));
    for (double tau : data.instants) {
      Vector y = noisy_output(data, tau);
      std::vector<std::string> row{cell(tau)};
      for (Index i = 0; i < p; ++i) row.push_back(cell(y[i]));
      samples.row(row);
    }
    samples.save(ctx.out / "samples.csv");
    ctx.artifacts.push_back("samples.csv");

    Json extra;
    extra["states_within_bounds"] = truth.states_within_bounds;
    extra["sample_count"] = data.instants.size();
    write_sidecar(ctx, "simulate", extra);
    note(ctx, "simulate: " + std::to_string(truth.node_count()) + " nodes, " +
                  std::to_string(data.instants.size()) + " samples -> " + ctx.out.string());
    return 0;
  });
}

int cmd_estimate(const CliOptions& opt) {
  bool strict = opt.strict;
  return guarded(opt, [strict](RunContext& ctx) {
    const ExperimentConfig& cfg = ctx.cfg;
    if (!cfg.has_estimator) throw ConfigError("estimator: section required for this command");
    SimData data = prepare_sim(ctx);
    const Benchmark6d bench =
        cfg.model_type == "benchmark6d" ? make_benchmark6d() : Benchmark6d{data.model};
    Vector xhat0 = cfg.x0_hat ? *cfg.x0_hat : bench.x0_prior;

    EstimationRun run = run_estimator(data.model, data.instants, data.u, data.truth, data.w,
                                      data.v, *cfg.estimator, xhat0);

    const Index n = data.model.state_dim, p = data.model.output_dim;
    CsvWriter est(join_header({{"time"}, numbered("xhat", n), numbered("e", n)}));
    for (std::size_t k = 0; k < run.times.size(); ++k) {
      std::vector<std::string> row{cell(run.times[k])};
      const Vector& xh = run.estimate_trace[k];
      Vector e = xh - run.true_states[k];
      for (Index i = 0; i < n; ++i) row.push_back(cell(xh[i]));
      for (Index i = 0; i < n; ++i) row.push_back(cell(e[i]));
      est.row(row);
    }
    est.save(ctx.out / "estimate.csv");
    ctx.artifacts.push_back("estimate.csv");

    CsvWriter diag("time,iterations,cost,gradient_norm,converged");
    int failures = 0;
    for (const InstantRecord& rec : run.records) {
      diag.row({cell(rec.time), cell(rec.iterations), cell(rec.cost), cell(rec.gradient_norm),
                std::string(rec.converged ? "1" : "0")});
      if (!rec.converged) ++failures;
    }
    diag.save(ctx.out / "diagnostics.csv");
    ctx.artifacts.push_back("diagnostics.csv");

    CsvWriter samples(join_header({{"time"}, numbered("y", p)}));
    for (double tau : run.measurement_instants) {
      Vector y = noisy_output(data, tau);
      std::vector<std::string> row{cell(tau)};
      for (Index i = 0; i < p; ++i) row.push_back(cell(y[i]));
      samples.row(row);
    }
    samples.save(ctx.out / "samples.csv");
    ctx.artifacts.push_back("samples.csv");

    Json extra;
    extra["instants"] = run.measurement_instants.size();
    extra["failures"] = failures;
    if (cfg.P1) {
      const MheConfig& mc = *cfg.estimator;
      ExponentialIiossParams params{WeightedNorm(*cfg.P1), mc.P2, mc.Qw, mc.Qv, mc.R, mc.eta};
      double rate = cfg.bound_rate > 0.0 ? cfg.bound_rate : 0.5 * mc.eta;
      RgesReport rep = verify_rges_bound(run, params, rate);
      Json bound;
      bound["holds"] = rep.holds;
      bound["hypothesis_value"] = rep.hypothesis_value;
      bound["hypothesis_ok"] = rep.hypothesis_ok;
      bound["lambda_max_pencil"] = rep.lambda_max_pencil;
      bound["rate"] = rate;
      bound["fitted_decay_rate"] = rep.fitted_decay_rate;
      bound["worst_margin"] = rep.worst_margin;
      bound["worst_t"] = rep.worst_time;
      write_json_file(ctx.out / "bound.json", bound);
      ctx.artifacts.push_back("bound.json");
    }
    write_sidecar(ctx, "estimate", extra);

    auto errs = run.error_norms();
    note(ctx, "estimate: " + std::to_string(run.records.size()) + " solves, " +
                  std::to_string(failures) + " non-converged, final error " +
                  (errs.empty() ? std::string("n/a") : format_double(errs.back())));
    if (strict && failures > 0) {
      std::cerr << "estimate: " << failures << " horizon solves did not converge\n";
      return 3;
    }
    return 0;
  });
}

int cmd_analyze_linear(const CliOptions& opt) {
  int workers = opt.workers;
  return guarded(opt, [workers](RunContext& ctx) {
    const ExperimentConfig& cfg = ctx.cfg;
    if (cfg.model_type != "linear")
      throw ConfigError("model.type: analyze-linear needs a linear model");
    if (!cfg.has_analysis) throw ConfigError("analysis: section required for this command");
    const Matrix A = cfg.linear->A;
    const Matrix C = cfg.linear->C;
    const double T = cfg.window;

    Json out;
    std::vector<std::string> warnings;

    Eigen::EigenSolver<Matrix> eigs(A);
    std::vector<std::pair<double, double>> spectrum;
    for (Index i = 0; i < A.rows(); ++i)
      spectrum.emplace_back(eigs.eigenvalues()[i].real(), eigs.eigenvalues()[i].imag());
    std::sort(spectrum.begin(), spectrum.end());
    Json eig_json = Json::array();
    for (auto& [re, im] : spectrum) eig_json.push_back({re, im});
    out["eigenvalues"] = eig_json;

    SpectralSplit split = split_spectrum(A, C);
    out["stable_dim"] = split.stable_dim();
    out["unstable_dim"] = split.unstable_dim();
    out["split_residual"] = (split.reassemble() - A).norm();
    out["k_star_full"] = zero_count_bound(A, T);

    std::optional<ScheduleDesign> design;
    Json sched_json;
    if (split.unstable_dim() == 0) {
      sched_json["requirement"] = "any";
      sched_json["feasible"] = true;
      out["k_star"] = 0.0;
    } else {
      out["k_star"] = zero_count_bound(split.A_unstable, T);
      try {
        design = design_schedule(split.A_unstable, split.C_unstable, T, cfg.epsilon);
        sched_json["feasible"] = true;
        sched_json["samples_per_window"] = design->samples_per_window;
        sched_json["separation"] = design->separation;
        sched_json["sigma_floor"] = design->sigma_floor;
        sched_json["offsets"] = design->offsets;
      } catch (const CertificateError& e) {
        sched_json["feasible"] = false;
        sched_json["error"] = e.what();
        warnings.push_back(std::string("schedule design failed: ") + e.what());
      } catch (const std::invalid_argument& e) {
        sched_json["feasible"] = false;
        sched_json["error"] = e.what();
        warnings.push_back(std::string("schedule design failed: ") + e.what());
      }
    }

    Json cert_json;
    if (design) {
      std::vector<double> instants = design->instants(cfg.window_count);
      CsvWriter sched_csv("index,time");
      for (std::size_t i = 0; i < instants.size(); ++i)
        sched_csv.row({cell(static_cast<Index>(i)), cell(instants[i])});
      sched_csv.save(ctx.out / "schedule.csv");
      ctx.artifacts.push_back("schedule.csv");

      struct WindowRow {
        double t_lo = 0.0, t_hi = 0.0;
        Index samples = 0, rank = 0;
        double sigma_min = 0.0;
      };
      std::vector<WindowRow> rows(static_cast<std::size_t>(cfg.window_count));
      const Matrix Au = split.A_unstable, Cu = split.C_unstable;
      parallel_for(cfg.window_count, workers, [&](int w) {
        WindowRow r;
        r.t_lo = T * static_cast<double>(w);
        r.t_hi = r.t_lo + T;
        std::vector<double> in_window;
        for (double tau : instants)
          if (tau > r.t_lo && tau <= r.t_hi + 1e-12) in_window.push_back(tau);
        r.samples = static_cast<Index>(in_window.size());
        auto c = observability_certificate(build_observability_matrix(Au, Cu, in_window),
                                           r.t_lo);
        r.rank = c.rank;
        r.sigma_min = c.sigma_min;
        rows[static_cast<std::size_t>(w)] = r;
      });
      CsvWriter sigma_csv("window,t_lo,t_hi,samples,rank,sigma_min");
      double table_min = kInf;
      for (std::size_t w = 0; w < rows.size(); ++w) {
        const WindowRow& r = rows[w];
        sigma_csv.row({cell(static_cast<Index>(w)), cell(r.t_lo), cell(r.t_hi),
                       cell(r.samples), cell(r.rank), cell(r.sigma_min)});
        table_min = std::min(table_min, r.sigma_min);
      }
      sigma_csv.save(ctx.out / "sigma.csv");
      ctx.artifacts.push_back("sigma.csv");
      sched_json["table_sigma_min"] = table_min;

      auto first = observability_certificate(
          build_observability_matrix(Au, Cu, design->offsets), 0.0);
      cert_json["instants"] = design->offsets;
      cert_json["rank"] = first.rank;
      cert_json["sigma_min"] = first.sigma_min;
    } else {
      cert_json["instants"] = Json::array();
      cert_json["rank"] = 0;
      cert_json["sigma_min"] = 0.0;
    }
    out["schedule"] = sched_json;
    out["certificate"] = cert_json;

    Json obs_json;
    try {
      DetectabilityCertificateLinear cert = compute_observer_certificate(A, C, cfg.margin);
      obs_json["detectable"] = true;
      obs_json["c"] = cert.amplitude;
      obs_json["lambda"] = cert.decay_rate;
      obs_json["gain"] = matrix_to_json(cert.gain);
      obs_json["gamma_state"] = cert.gamma_state;
      obs_json["gamma_dist"] = cert.gamma_dist;
      obs_json["gamma_out"] = cert.gamma_out;
    } catch (const CertificateError& e) {
      obs_json["detectable"] = false;
      obs_json["error"] = e.what();
      warnings.push_back(std::string("observer design failed: ") + e.what());
    }
    out["observer"] = obs_json;

    if (cfg.has_estimator && cfg.P1) {
      const MheConfig& mc = *cfg.estimator;
      double lmax = generalized_eig_max(mc.P2.matrix(), *cfg.P1);
      double value = 4.0 * lmax * lmax * std::exp(-mc.eta * mc.horizon);
      Json hyp;
      hyp["lambda_max_pencil"] = lmax;
      hyp["value"] = value;
      hyp["ok"] = value < 1.0;
      out["hypothesis"] = hyp;
      if (!(value < 1.0))
        warnings.push_back("estimator hypothesis violated: 4 lmax^2 e^{-eta M} = " +
                           format_double(value) + " >= 1");
    }

    out["warnings"] = warnings;
    for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
    write_json_file(ctx.out / "analysis.json", out);
    ctx.artifacts.push_back("analysis.json");
    write_sidecar(ctx, "analyze-linear");
    note(ctx, "analyze-linear: k* = " + format_double(out["k_star"].get<double>()) + " -> " +
                  ctx.out.string());
    return 0;
  });
}

int cmd_check_certificates(const CliOptions& opt) {
  int workers = opt.workers;
  return guarded(opt, [workers](RunContext& ctx) {
    const ExperimentConfig& cfg = ctx.cfg;
    if (!cfg.has_certificates)
      throw ConfigError("certificates: section required for this command");
    SystemModel model = cfg.build_model();

    // Parameters: explicit from the config, or assembled from the observer
    // certificate and the designed schedule.
    std::optional<ExponentialIiossParams> params = cfg.explicit_params;
    std::optional<ScheduleDesign> design;
    if (cfg.derived_params) {
      if (cfg.model_type != "linear")
        throw ConfigError("certificates.params: derived parameters need a linear model");
      if (!cfg.has_analysis)
        throw ConfigError("analysis: section required to derive certificate parameters");
      const Matrix A = cfg.linear->A, C = cfg.linear->C;
      DetectabilityCertificateLinear cert = compute_observer_certificate(A, C, cfg.margin);
      design = design_schedule(A, C, cfg.window, cfg.epsilon);
      params = certified_iioss_params(A, C, cert, *design);
    }

    // Sample instants: the config schedule when present, else the designed
    // pattern tiled across the pair horizon.
    std::vector<double> instants;
    if (cfg.has_schedule) {
      for (double tau : cfg.schedule_instants) {
        if (tau > cfg.pair_t_end + 1e-9 * cfg.dt) break;
        if (!grid_aligned(tau, cfg.dt))
          throw ConfigError("schedule.instants: not on the dt grid");
        instants.push_back(tau);
      }
    } else if (design) {
      int windows = static_cast<int>(std::ceil(cfg.pair_t_end / design->window)) + 1;
      for (double tau : design->instants(windows)) {
        if (tau > cfg.pair_t_end + 1e-9 * cfg.dt) break;
        Index node = static_cast<Index>(std::llround(tau / cfg.dt));
        instants.push_back(static_cast<double>(node) * cfg.dt);  // snap to the grid
      }
      // Snapping could merge two samples; keep the instants strictly increasing.
      instants.erase(std::unique(instants.begin(), instants.end()), instants.end());
    } else {
      throw ConfigError("schedule: section required (no designed schedule to fall back on)");
    }

    Box region = cfg.pair_region ? *cfg.pair_region : model.state_box;
    if (!region.is_bounded())
      throw ConfigError(
          "certificates.region: required (the model state bounds are unbounded)");

    const double dt = cfg.dt, t_end = cfg.pair_t_end;
    Index cells = std::max<Index>(grid_node(t_end, dt), 1);
    Signal u = cfg.u_constant ? Signal::constant(*cfg.u_constant, dt, cells)
                              : Signal::zero(model.input_dim, dt, cells);
    const bool draw_w = model.disturbance_box.is_bounded();
    const bool draw_v = model.noise_box.is_bounded();

    SufficientConditionGains suff;
    if (cfg.check_kind == "sufficient") {
      auto quad = [](double c) { return [c](double s) { return c * s * s; }; };
      suff = SufficientConditionGains{quad(cfg.g_y), quad(cfg.g_v), quad(cfg.a_w),
                                      quad(cfg.a_y), quad(cfg.a_v)};
    }

    struct PairRow {
      std::uint64_t seed = 0;
      CheckReport report;
    };
    std::vector<PairRow> rows(static_cast<std::size_t>(cfg.pair_count));
    parallel_for(cfg.pair_count, workers, [&](int i) {
      std::uint64_t base = derive_seed(cfg.pair_seed, 10, static_cast<std::uint64_t>(i));
      std::mt19937_64 rng(base);
      Vector chi1 = draw_in_box(region, rng);
      Vector chi2 = draw_in_box(region, rng);
      auto noise_or_zero = [&](bool draw, const Box& box, Index dim, std::uint64_t stream) {
        return draw ? generate_noise(box, dt, cells,
                                     derive_seed(base, stream, static_cast<std::uint64_t>(i)))
                    : Signal::zero(dim, dt, cells);
      };
      Signal w1 = noise_or_zero(draw_w, model.disturbance_box, model.disturbance_dim, 11);
      Signal w2 = noise_or_zero(draw_w, model.disturbance_box, model.disturbance_dim, 12);
      Signal v1 = noise_or_zero(draw_v, model.noise_box, model.noise_dim, 13);
      Signal v2 = noise_or_zero(draw_v, model.noise_box, model.noise_dim, 14);
      TrajectoryPair pair =
          simulate_pair(model, u, chi1, w1, v1, chi2, w2, v2, instants, t_end, dt);
      PairRow row;
      row.seed = base;
      row.report = cfg.check_kind == "sufficient"
                       ? check_sufficient_condition(pair, cfg.t_star, suff)
                       : check_exp_iioss_sampled(pair, *params);
      rows[static_cast<std::size_t>(i)] = row;
    });

    CsvWriter csv("pair,seed,holds,worst_margin,worst_time,lhs_at_worst,rhs_at_worst");
    bool all_hold = true;
    int violations = 0;
    double worst_margin = kInf, worst_t = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const CheckReport& r = rows[i].report;
      csv.row({cell(static_cast<Index>(i)), std::to_string(rows[i].seed),
               std::string(r.holds ? "1" : "0"), cell(r.worst_margin), cell(r.worst_time),
               cell(r.lhs_at_worst), cell(r.rhs_at_worst)});
      if (!r.holds) {
        all_hold = false;
        ++violations;
      }
      if (r.worst_margin < worst_margin) {
        worst_margin = r.worst_margin;
        worst_t = r.worst_time;
      }
    }
    csv.save(ctx.out / "checks.csv");
    ctx.artifacts.push_back("checks.csv");

    Json report;
    report["holds"] = all_hold;
    report["pair_count"] = cfg.pair_count;
    report["violations"] = violations;
    report["worst_margin"] = cfg.pair_count ? worst_margin : 0.0;
    report["worst_t"] = worst_t;
    Json echo;
    echo["check"] = cfg.check_kind;
    if (params) {
      echo["P1"] = matrix_to_json(params->P1.matrix());
      echo["P2"] = matrix_to_json(params->P2.matrix());
      echo["Qw"] = matrix_to_json(params->Qw.matrix());
      echo["Qv"] = matrix_to_json(params->Qv.matrix());
      echo["R"] = matrix_to_json(params->R.matrix());
      echo["eta"] = params->eta;
    }
    if (cfg.check_kind == "sufficient") {
      echo["gains"] = {{"gamma_y", cfg.g_y}, {"gamma_v", cfg.g_v}, {"alpha_w", cfg.a_w},
                       {"alpha_y", cfg.a_y}, {"alpha_v", cfg.a_v}};
      echo["t_star"] = cfg.t_star;
    }
    report["params_echo"] = echo;
    write_json_file(ctx.out / "report.json", report);
    ctx.artifacts.push_back("report.json");
    write_sidecar(ctx, "check-certificates");
    note(ctx, "check-certificates: " + std::to_string(cfg.pair_count) + " pairs, " +
                  std::to_string(violations) + " violations");
    return 0;
  });
}

}  // namespace sbmhe
