// Copyright 2026 The Omnisim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "omnisim/optimizer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>

#include "omnisim/csv.hpp"
#include "omnisim/rng.hpp"

namespace omnisim::opt {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool within(double loss, double best, double threshold) {
  return loss <= best + threshold * std::abs(best);
}

std::string point_name(std::size_t g, double mu, double eta) {
  std::ostringstream os;
  os << "(g=" << g << ", mu=" << csv::real(mu) << ", eta=" << csv::real(eta)
     << ")";
  return os.str();
}

struct Contender {
  std::size_t g = 1;
  double mu = 0.0;
  double eta = 0.0;
  ProbeResult last;
  double chain_seconds = 0.0;
};

// Lower loss; equal losses go to the lower eta, then mu, then g.
bool prefer(const Contender& a, const Contender& b) {
  return std::tie(a.last.loss, a.eta, a.mu, a.g) <
         std::tie(b.last.loss, b.eta, b.mu, b.g);
}

// Runs rounds of probes over `pool` until one contender is left within the
// threshold of the best, or max_rounds is reached. Every contender of a round
// uses the same stream.
SearchResult run_rounds(const GridSpec& grid, const sgd::SGDState& start,
                        std::vector<Contender> pool, ProbeSession& session,
                        std::string_view what) {
  ProbeEnvironment& env = session.env();
  for (Contender& c : pool) c.last.state = start;
  std::size_t rounds = 0;
  while (true) {
    const std::uint64_t stream = session.next_stream();
    for (Contender& c : pool) {
      c.last = env.run(c.last.state, c.g, c.mu, c.eta, grid.probe_seconds,
                       stream, false);
      c.chain_seconds += c.last.seconds;
      session.probe_seconds += c.last.seconds;
    }
    ++rounds;

    double best = kInf;
    for (const Contender& c : pool) best = std::min(best, c.last.loss);
    if (!(best < kInf)) {
      std::ostringstream os;
      os << what << ": every configuration diverged:";
      for (const Contender& c : pool) os << ' ' << point_name(c.g, c.mu, c.eta);
      throw DivergenceError(os.str());
    }
    std::vector<Contender> next;
    for (Contender& c : pool) {
      if (within(c.last.loss, best, grid.winner_threshold)) {
        next.push_back(std::move(c));
      }
    }
    pool = std::move(next);
    if (pool.size() == 1 || rounds >= grid.max_rounds) break;
  }
  const Contender& win = *std::min_element(pool.begin(), pool.end(), prefer);
  SearchResult out;
  out.g = win.g;
  out.mu = win.mu;
  out.eta = win.eta;
  out.state = win.last.state;
  out.loss = win.last.loss;
  out.seconds = win.chain_seconds;
  out.rounds = rounds;
  return out;
}

std::vector<std::size_t> candidates_for(std::size_t n, const GridSpec& grid) {
  if (grid.group_candidates.empty()) return cluster::power_of_two_divisors(n);
  std::vector<std::size_t> out = grid.group_candidates;
  std::sort(out.begin(), out.end());
  return out;
}

bool contains(const std::vector<std::size_t>& v, std::size_t x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

void append_shifted(std::vector<sgd::LossSample>& out,
                    const std::vector<sgd::LossSample>& samples, double offset) {
  for (const sgd::LossSample& s : samples) {
    out.push_back({s.step, offset + s.sim_time, s.loss});
  }
}

}  // namespace

void GridSpec::validate() const {
  if (momenta.empty()) throw std::invalid_argument("grid: momentum grid is empty");
  if (lr_divisors.empty()) throw std::invalid_argument("grid: lr_divisors is empty");
  if (sweep_etas.empty()) throw std::invalid_argument("grid: sweep_etas is empty");
  for (double m : momenta) {
    if (!(m >= 0.0 && m < 1.0)) throw std::invalid_argument("grid: momentum outside [0, 1)");
  }
  for (double m : refine_momenta) {
    if (!(m >= 0.0 && m < 1.0)) {
      throw std::invalid_argument("grid: refine momentum outside [0, 1)");
    }
  }
  if (!(sweep_momentum >= 0.0 && sweep_momentum < 1.0)) {
    throw std::invalid_argument("grid: sweep_momentum outside [0, 1)");
  }
  for (double d : lr_divisors) {
    if (!(d >= 1.0)) throw std::invalid_argument("grid: lr divisors must be >= 1");
  }
  for (double e : sweep_etas) {
    if (!(e > 0.0)) throw std::invalid_argument("grid: sweep etas must be > 0");
  }
  if (!(probe_seconds > 0.0)) throw std::invalid_argument("grid: probe_seconds must be > 0");
  if (!(winner_threshold >= 0.0)) {
    throw std::invalid_argument("grid: winner_threshold must be >= 0");
  }
  if (max_rounds == 0) throw std::invalid_argument("grid: max_rounds must be >= 1");
  for (std::size_t g : group_candidates) {
    if (g == 0 || (g & (g - 1)) != 0) {
      throw std::invalid_argument("grid: group candidates must be powers of two");
    }
  }
}

void EpochConfig::validate(const GridSpec& grid) const {
  if (!(epoch_seconds > grid.probe_seconds)) {
    throw std::invalid_argument("epochs: epoch_seconds must exceed probe_seconds");
  }
  if (!(cold_start_seconds >= 0.0)) {
    throw std::invalid_argument("epochs: cold_start_seconds must be >= 0");
  }
  if (max_epochs == 0) throw std::invalid_argument("epochs: max_epochs must be >= 1");
}

SimEnvironment::SimEnvironment(const sgd::TrainingProblem& problem,
                               const SimEnvironmentOptions& options)
    : problem_(problem), options_(options) {
  if (options_.devices == 0) {
    throw std::invalid_argument("environment: devices must be >= 1");
  }
  options_.profile.validate();
}

ProbeResult SimEnvironment::run(const sgd::SGDState& start, std::size_t g,
                                double mu, double eta, double seconds,
                                std::uint64_t stream, bool stop_at_target) {
  sim::SimConfig cfg;
  cfg.plan = cluster::ExecutionPlan(options_.devices, g);
  cfg.profile = options_.profile;
  cfg.hp.eta = eta;
  cfg.hp.mu = mu;
  cfg.hp.lambda = options_.lambda;
  cfg.hp.batch = options_.batch;
  cfg.problem = &problem_;
  cfg.service_mode = options_.service_mode;
  cfg.max_sim_seconds = seconds;
  cfg.seed = derive_seed(options_.seed, stream);
  cfg.init = start;
  cfg.smoothing_window = options_.smoothing_window;
  if (stop_at_target) cfg.target_loss = options_.target_loss;

  sim::SimTrace trace = sim::simulate(cfg);
  ProbeResult out;
  out.diverged = trace.diverged;
  out.reached_target = trace.reached_target;
  out.seconds = trace.end_time;
  if (trace.diverged) {
    out.loss = kInf;
  } else {
    const std::size_t n = trace.loss.size();
    const std::size_t w = std::min(n, std::max<std::size_t>(options_.smoothing_window, 1));
    double acc = 0.0;
    for (std::size_t i = n - w; i < n; ++i) acc += trace.loss[i].loss;
    out.loss = acc / static_cast<double>(w);
  }
  out.state = std::move(trace.final_state);
  out.samples = std::move(trace.loss);
  return out;
}

double SimEnvironment::loss(const sgd::SGDState& state) const {
  return problem_.full_loss(state.w);
}

SearchResult search_points(const GridSpec& grid, const sgd::SGDState& start,
                           std::size_t g,
                           const std::vector<std::pair<double, double>>& points,
                           ProbeSession& session) {
  if (points.empty()) throw std::invalid_argument("grid_search: no grid points");
  std::vector<Contender> pool;
  for (const auto& [mu, eta] : points) {
    Contender c;
    c.g = g;
    c.mu = mu;
    c.eta = eta;
    pool.push_back(std::move(c));
  }
  return run_rounds(grid, start, std::move(pool), session, "grid_search");
}

SearchResult grid_search(const GridSpec& grid, const sgd::SGDState& start,
                         std::size_t g, double mu_last, double eta_last,
                         ProbeSession& session) {
  grid.validate();
  if (!(eta_last > 0.0)) throw std::invalid_argument("grid_search: eta_last must be > 0");
  std::vector<std::pair<double, double>> points;
  for (double d : grid.lr_divisors) {
    const double eta = eta_last / d;
    for (double mu : grid.momenta) {
      if (d == 1.0 && mu > mu_last) continue;
      points.emplace_back(mu, eta);
    }
  }
  return search_points(grid, start, g, points, session);
}

SearchResult refine_zero_momentum(const GridSpec& grid,
                                  const sgd::SGDState& start, std::size_t g,
                                  double eta, ProbeSession& session) {
  std::vector<std::pair<double, double>> points{{0.0, eta}};
  for (double mu : grid.refine_momenta) points.emplace_back(mu, eta);
  return search_points(grid, start, g, points, session);
}

cluster::SaturationChoice init_groups(std::size_t n,
                                      const cluster::PhaseProfile& profile,
                                      const GridSpec& grid) {
  return cluster::min_saturating_groups(n, profile, candidates_for(n, grid));
}

ColdStartResult cold_start(const GridSpec& grid, const EpochConfig& epochs,
                           const sgd::SGDState& start, std::size_t max_groups,
                           ProbeSession& session) {
  grid.validate();
  ProbeEnvironment& env = session.env();
  const std::size_t n = env.devices();

  // Synchronous sweep; stop once the loss gets worse.
  const std::uint64_t sweep_stream = session.next_stream();
  Contender sync;
  sync.last.loss = kInf;
  double prev = kInf;
  for (double eta : grid.sweep_etas) {
    ProbeResult r = env.run(start, 1, grid.sweep_momentum, eta,
                            grid.probe_seconds, sweep_stream, false);
    session.probe_seconds += r.seconds;
    const double loss = r.loss;
    if (loss < sync.last.loss) {
      sync.g = 1;
      sync.mu = grid.sweep_momentum;
      sync.eta = eta;
      sync.chain_seconds = r.seconds;
      sync.last = std::move(r);
    }
    if (loss > prev) break;
    prev = loss;
  }
  if (!(sync.last.loss < kInf)) {
    throw DivergenceError("cold_start: every learning rate of the sync sweep diverged");
  }

  SearchResult choice;
  choice.g = 1;
  choice.mu = sync.mu;
  choice.eta = sync.eta;
  choice.state = sync.last.state;
  choice.loss = sync.last.loss;
  choice.seconds = sync.chain_seconds;
  choice.rounds = 1;

  const std::vector<std::size_t> cands = candidates_for(n, grid);
  // One probe round per g; the race below does the extending.
  GridSpec once = grid;
  once.max_rounds = 1;
  std::vector<Contender> racers;
  double mu_last = sync.mu;
  double eta_last = sync.eta;
  for (std::size_t g = 2; g <= max_groups && g <= n; g *= 2) {
    if (!contains(cands, g) || n % g != 0) continue;
    try {
      const SearchResult r = grid_search(once, start, g, mu_last, eta_last, session);
      Contender c;
      c.g = r.g;
      c.mu = r.mu;
      c.eta = r.eta;
      racers.push_back(c);
      mu_last = r.mu;
      eta_last = r.eta;
    } catch (const DivergenceError&) {
      // No usable configuration at this g.
    }
  }
  if (!racers.empty()) {
    Contender s;
    s.g = 1;
    s.mu = sync.mu;
    s.eta = sync.eta;
    racers.insert(racers.begin(), s);
    // Race the per-g winners from the same start.
    choice = run_rounds(grid, start, std::move(racers), session, "cold_start");
  }

  ColdStartResult out;
  out.choice = choice;
  out.state = choice.state;
  if (epochs.cold_start_seconds > 0.0) {
    ProbeResult r = env.run(choice.state, choice.g, choice.mu, choice.eta,
                            epochs.cold_start_seconds, session.next_stream(), true);
    out.trained = true;
    out.train_seconds = r.seconds;
    out.reached_target = r.reached_target;
    out.samples = std::move(r.samples);
    if (r.diverged) {
      out.state = choice.state;
    } else {
      out.state = std::move(r.state);
    }
  }
  return out;
}

double OptimizeResult::overhead() const {
  return elapsed_s > 0.0 ? (probe_s - kept_s) / elapsed_s : 0.0;
}

OptimizeResult optimize(ProbeEnvironment& env, const sgd::SGDState& init,
                        const GridSpec& grid, const EpochConfig& epochs,
                        const EpochHook& hook,
                        const std::optional<Checkpoint>& resume,
                        std::optional<std::size_t> initial_groups) {
  grid.validate();
  epochs.validate(grid);
  const std::size_t n = env.devices();
  const std::vector<std::size_t> cands = candidates_for(n, grid);

  OptimizeResult out;
  ProbeSession session(env, resume ? resume->seed_cursor : 0);
  sgd::SGDState state;
  std::size_t g = 1;
  double mu = 0.0;
  double eta = 0.0;
  std::size_t epoch = 0;

  std::size_t trace_mark = 0;
  auto finish_epoch = [&](EpochRecord rec) {
    Checkpoint ckpt;
    ckpt.state = state;
    ckpt.seed_cursor = session.cursor();
    ckpt.epoch = rec.epoch;
    ckpt.g = g;
    ckpt.mu = mu;
    ckpt.eta = eta;
    ckpt.elapsed_s = out.elapsed_s;
    ckpt.probe_s = session.probe_seconds;
    ckpt.kept_s = session.kept_seconds;
    ckpt.done = rec.reached_target;
    if (hook) {
      rec.checkpoint = hook(rec, ckpt,
                            std::span<const sgd::LossSample>(out.trace).subspan(trace_mark));
    }
    trace_mark = out.trace.size();
    out.log.push_back(std::move(rec));
  };

  if (resume) {
    state = resume->state;
    g = resume->g;
    mu = resume->mu;
    eta = resume->eta;
    epoch = resume->epoch;
    out.elapsed_s = resume->elapsed_s;
    session.probe_seconds = resume->probe_s;
    session.kept_seconds = resume->kept_s;
    out.reached_target = resume->done;
    if (state.w.size() != init.w.size()) {
      throw std::invalid_argument("optimize: checkpoint dimension does not match the problem");
    }
  } else {
    if (initial_groups) {
      if (!contains(cands, *initial_groups) || n % *initial_groups != 0) {
        throw std::invalid_argument("optimize: initial group count is not a candidate");
      }
      g = *initial_groups;
    } else {
      g = init_groups(n, env.profile(), grid).groups;
    }
    const double probe_before = session.probe_seconds;
    const ColdStartResult cs = cold_start(grid, epochs, init, g, session);
    const double probe = session.probe_seconds - probe_before;
    session.kept_seconds += cs.choice.seconds;
    append_shifted(out.trace, cs.samples, out.elapsed_s + probe);
    out.elapsed_s += probe + cs.train_seconds;
    state = cs.state;
    mu = cs.choice.mu;
    eta = cs.choice.eta;

    EpochRecord rec;
    rec.epoch = 0;
    rec.g = cs.choice.g;
    rec.mu = cs.choice.mu;
    rec.eta = cs.choice.eta;
    rec.probe_seconds = probe;
    rec.train_seconds = cs.train_seconds;
    rec.probe_overhead_frac = (probe - cs.choice.seconds) / (probe + cs.train_seconds);
    rec.end_loss = env.loss(state);
    rec.reached_target = cs.reached_target;
    out.reached_target = cs.reached_target;
    finish_epoch(std::move(rec));
  }

  while (!out.reached_target && epoch < epochs.max_epochs) {
    ++epoch;
    const double probe_before = session.probe_seconds;
    SearchResult res = grid_search(grid, state, g, mu, eta, session);
    while (res.mu == 0.0 && g > 1) {
      SearchResult refined = refine_zero_momentum(grid, state, g, res.eta, session);
      if (refined.mu > 0.0) {
        res = std::move(refined);
        break;
      }
      std::size_t half = g / 2;
      while (half > 1 && !contains(cands, half)) half /= 2;
      g = half;
      res = grid_search(grid, state, g, mu, eta, session);
    }
    const double probe = session.probe_seconds - probe_before;
    session.kept_seconds += res.seconds;
    mu = res.mu;
    eta = res.eta;

    ProbeResult r = env.run(res.state, g, mu, eta, epochs.epoch_seconds,
                            session.next_stream(), true);
    append_shifted(out.trace, r.samples, out.elapsed_s + probe);
    out.elapsed_s += probe + r.seconds;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.g = g;
    rec.mu = mu;
    rec.eta = eta;
    rec.probe_seconds = probe;
    rec.train_seconds = r.seconds;
    rec.probe_overhead_frac = (probe - res.seconds) / (probe + r.seconds);
    if (r.diverged) {
      // Keep the last good model and search lower rates next epoch.
      state = std::move(res.state);
      eta /= 10.0;
      rec.end_loss = kInf;
    } else {
      state = std::move(r.state);
      rec.end_loss = env.loss(state);
    }
    rec.reached_target = r.reached_target;
    out.reached_target = r.reached_target;
    finish_epoch(std::move(rec));
  }

  out.final_state = std::move(state);
  out.probe_s = session.probe_seconds;
  out.kept_s = session.kept_seconds;
  out.seed_cursor = session.cursor();
  return out;
}

// ---- checkpoint files ------------------------------------------------------

namespace {

constexpr std::string_view kMagic = "OMNISIM-CKPT";
constexpr std::string_view kVersion = "v1";

template <typename T>
T parse_uint(std::string_view field, std::string_view text) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw std::invalid_argument("checkpoint: invalid value for field '" +
                                std::string(field) + "': '" + std::string(text) + "'");
  }
  return value;
}

double parse_double(std::string_view field, std::string_view text) {
  try {
    return csv::parse_real(text);
  } catch (const std::invalid_argument&) {
    throw std::invalid_argument("checkpoint: invalid value for field '" +
                                std::string(field) + "': '" + std::string(text) + "'");
  }
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  if (ckpt.state.v.size() != ckpt.state.w.size()) {
    throw std::invalid_argument("checkpoint: W and V differ in length");
  }
  out << kMagic << ' ' << kVersion << " dim=" << ckpt.state.w.size()
      << " t=" << ckpt.state.t << " seed_cursor=" << ckpt.seed_cursor
      << " epoch=" << ckpt.epoch << " g=" << ckpt.g
      << " mu=" << csv::real(ckpt.mu) << " eta=" << csv::real(ckpt.eta)
      << " elapsed_s=" << csv::real(ckpt.elapsed_s)
      << " probe_s=" << csv::real(ckpt.probe_s)
      << " kept_s=" << csv::real(ckpt.kept_s) << " done=" << (ckpt.done ? 1 : 0)
      << '\n';
  for (double x : ckpt.state.w) out << csv::real(x) << '\n';
  for (double x : ckpt.state.v) out << csv::real(x) << '\n';
}

Checkpoint read_checkpoint(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw std::invalid_argument("checkpoint: empty file");
  std::istringstream hs(header);
  std::string magic;
  std::string version;
  hs >> magic >> version;
  if (magic != kMagic) {
    throw std::invalid_argument("checkpoint: invalid field 'magic': expected OMNISIM-CKPT");
  }
  if (version != kVersion) {
    throw std::invalid_argument("checkpoint: invalid field 'version': '" + version + "'");
  }
  std::map<std::string, std::string, std::less<>> fields;
  std::string token;
  while (hs >> token) {
    const std::size_t eq = token.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw std::invalid_argument("checkpoint: malformed header token '" + token + "'");
    }
    const std::string key = token.substr(0, eq);
    if (!fields.emplace(key, token.substr(eq + 1)).second) {
      throw std::invalid_argument("checkpoint: duplicate field '" + key + "'");
    }
  }
  auto required = [&](std::string_view key) -> const std::string& {
    const auto it = fields.find(key);
    if (it == fields.end()) {
      throw std::invalid_argument("checkpoint: missing field '" + std::string(key) + "'");
    }
    return it->second;
  };

  Checkpoint ckpt;
  const auto dim = parse_uint<std::size_t>("dim", required("dim"));
  ckpt.state.t = parse_uint<std::uint64_t>("t", required("t"));
  ckpt.seed_cursor = parse_uint<std::uint64_t>("seed_cursor", required("seed_cursor"));
  for (const auto& [key, value] : fields) {
    if (key == "dim" || key == "t" || key == "seed_cursor") continue;
    if (key == "epoch") {
      ckpt.epoch = parse_uint<std::size_t>(key, value);
    } else if (key == "g") {
      ckpt.g = parse_uint<std::size_t>(key, value);
    } else if (key == "mu") {
      ckpt.mu = parse_double(key, value);
    } else if (key == "eta") {
      ckpt.eta = parse_double(key, value);
    } else if (key == "elapsed_s") {
      ckpt.elapsed_s = parse_double(key, value);
    } else if (key == "probe_s") {
      ckpt.probe_s = parse_double(key, value);
    } else if (key == "kept_s") {
      ckpt.kept_s = parse_double(key, value);
    } else if (key == "done") {
      const auto flag = parse_uint<unsigned>(key, value);
      if (flag > 1) {
        throw std::invalid_argument("checkpoint: invalid value for field 'done': '" + value + "'");
      }
      ckpt.done = flag == 1;
    } else {
      throw std::invalid_argument("checkpoint: unknown field '" + key + "'");
    }
  }

  auto read_values = [&](std::string_view name, std::vector<double>& dst) {
    dst.resize(dim);
    std::string line;
    for (std::size_t i = 0; i < dim; ++i) {
      const std::string field = std::string(name) + "[" + std::to_string(i) + "]";
      if (!std::getline(in, line)) {
        throw std::invalid_argument("checkpoint: missing value for field '" + field + "'");
      }
      dst[i] = parse_double(field, line);
    }
  };
  read_values("W", ckpt.state.w);
  read_values("V", ckpt.state.v);
  std::string rest;
  while (std::getline(in, rest)) {
    if (!rest.empty()) {
      throw std::invalid_argument("checkpoint: trailing data after V (field 'dim' too small?)");
    }
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path.string());
  write_checkpoint(out, ckpt);
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  return read_checkpoint(in);
}

void write_decision_log_header(std::ostream& out) {
  out << "epoch,g,mu,eta,probe_overhead_frac,end_loss,checkpoint\n";
}

void write_decision_log_row(std::ostream& out, const EpochRecord& rec) {
  out << rec.epoch << ',' << rec.g << ',' << csv::real(rec.mu) << ','
      << csv::real(rec.eta) << ',' << csv::seconds(rec.probe_overhead_frac) << ','
      << csv::real(rec.end_loss) << ',' << rec.checkpoint << '\n';
}

}  // namespace omnisim::opt
