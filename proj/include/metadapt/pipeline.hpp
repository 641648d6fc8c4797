#pragma once

// Experiment drivers behind the command line: map generation, data
// collection, training, evaluation, and report comparison. Each driver
// takes the merged key=value config, fills in any defaults it consumes,
// and writes that resolved config next to its outputs so a run can be
// reproduced from the directory alone.

#include <atomic>
#include <exception>
#include <filesystem>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "metadapt/io.hpp"
#include "metadapt/meta_train.hpp"
#include "metadapt/metrics.hpp"

namespace metadapt {

namespace fs = std::filesystem;

// command-line / config mistakes; the binary maps these to exit code 2
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Config reader that records every default it hands out, so serializing
// the wrapped config afterwards yields the fully resolved settings.
class Resolved {
 public:
  explicit Resolved(const Config& base) : cfg_(base) {}

  int geti(const std::string& k, int d) {
    if (!cfg_.has(k)) cfg_.set(k, std::to_string(d));
    return cfg_.get_int(k, d);
  }
  double getd(const std::string& k, double d) {
    if (!cfg_.has(k)) cfg_.set(k, fmt_exact(d));
    return cfg_.get_double(k, d);
  }
  bool getb(const std::string& k, bool d) {
    if (!cfg_.has(k)) cfg_.set(k, d ? "true" : "false");
    return cfg_.get_bool(k, d);
  }
  std::string gets(const std::string& k, const std::string& d) {
    if (!cfg_.has(k)) cfg_.set(k, d);
    return cfg_.get_str(k, d);
  }
  std::uint64_t getseed(const std::string& k, std::uint64_t d) {
    return std::uint64_t(geti(k, int(d)));
  }

  const Config& config() const { return cfg_; }

 private:
  Config cfg_;
};

// Bounded worker pool over an index range with an ordered result slot per
// index; the merge order never depends on scheduling. The first exception
// wins and is rethrown on the caller's thread.
template <class Fn>
inline void parallel_for(int n, int threads, Fn fn) {
  if (n <= 0) return;
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex err_mu;
  auto work = [&] {
    for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      if (failed.load()) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

inline int thread_count(Resolved* r) {
  const int hw = int(std::thread::hardware_concurrency());
  return std::max(1, r->geti("threads", std::max(1, hw)));
}

inline std::vector<MapCategory> categories_from(Resolved* r) {
  const std::string want = r->gets("map_category", "all");
  if (want == "all")
    return std::vector<MapCategory>(kAllCategories.begin(), kAllCategories.end());
  const auto cat = parse_category(want);
  if (!cat) throw UsageError("unknown map category `" + want + "`");
  return {*cat};
}

inline std::string map_filename(MapCategory cat, std::uint64_t seed) {
  return std::string(category_name(cat)) + "-s" + std::to_string(seed) + ".tmap";
}

inline void write_resolved(const Resolved& r, const fs::path& dir) {
  write_text_file((dir / "resolved.cfg").string(), r.config().serialize());
}

// -- shared episode plumbing ----------------------------------------------

inline EpisodeConfig episode_config_from(Resolved* r) {
  EpisodeConfig ec;
  ec.mppi.samples = r->geti("mppi_samples", 64);
  ec.mppi.horizon = r->geti("mppi_horizon", 60);
  ec.mppi.lambda = r->getd("mppi_lambda", 2.0);
  ec.cost.rollover_limit = r->getd("rollover_limit", ec.cost.rollover_limit);
  ec.cost.rollover_weight = r->getd("rollover_weight", ec.cost.rollover_weight);
  ec.timeout = r->getd("timeout", 60.0);
  ec.waypoint_tol = r->getd("waypoint_tol", ec.waypoint_tol);
  ec.beta = r->getd("filter_decay", 1.0);
  ec.pred_horizon = r->getd("pred_horizon", 5.0);
  ec.pred_every = r->getd("pred_every", 1.0);
  return ec;
}

inline std::vector<std::array<double, 2>> course_from(Resolved* r) {
  const auto full = course_waypoints();
  const int n = r->geti("waypoints", 4);
  if (n < 1 || n > int(full.size()))
    throw UsageError("waypoints must be in [1, " +
                     std::to_string(full.size()) + "]");
  return {full.begin(), full.begin() + n};
}

inline const std::vector<std::string>& configuration_names() {
  static const std::vector<std::string> names = {
      "baseline", "sliding-lsq", "adaptation", "meta-adaptation"};
  return names;
}

// Builds the onboard stack for one of the four named configurations. The
// first three share the stock residual net and default filter tuning and
// differ only in the estimator wired into the loop; the fourth loads its
// net and filter from a trained checkpoint.
inline OnboardModel model_for_configuration(Resolved* r,
                                            const std::string& configuration) {
  OnboardModel m;
  const std::uint64_t net_seed = r->getseed("net_seed", 3);
  const int hidden = r->geti("net_hidden", 16);
  const int n_mix = r->geti("net_mix", 8);
  m.net = init_net_params(net_seed, hidden, n_mix);
  m.psi = onboard_params();
  m.filter = default_filter_params(n_mix);
  if (configuration == "baseline") {
    m.mode = AdaptMode::kNone;
  } else if (configuration == "sliding-lsq") {
    m.mode = AdaptMode::kSlidingLsq;
    m.lsq_window = r->geti("lsq_window", 25);
    m.lsq_ridge = r->getd("lsq_ridge", 1.0);
  } else if (configuration == "adaptation") {
    m.mode = AdaptMode::kKalman;
  } else if (configuration == "meta-adaptation") {
    const std::string path = r->gets("checkpoint", "");
    if (path.empty())
      throw UsageError("meta-adaptation needs --checkpoint");
    const Checkpoint ck = load_checkpoint(path);
    m.net = ck.net;
    m.psi = ck.psi;
    m.filter = ck.filter;
    m.mode = AdaptMode::kKalman;
  } else {
    std::string msg = "unknown configuration `" + configuration + "`; expected";
    for (const auto& n : configuration_names()) msg += " " + n;
    throw UsageError(msg);
  }
  return m;
}

// -- gen-maps ---------------------------------------------------------------

inline int cmd_gen_maps(const Config& cfg, std::ostream& log) {
  Resolved r(cfg);
  const fs::path out = r.gets("out", "runs/maps");
  const auto cats = categories_from(&r);
  const int count = r.geti("episodes", 5);
  const std::uint64_t base = r.getseed("map_seed", 1000);
  fs::create_directories(out);
  int written = 0;
  for (const auto cat : cats)
    for (int i = 0; i < count; ++i) {
      const std::uint64_t seed = base + std::uint64_t(i);
      const TerrainMap map = generate_map(cat, seed);
      const fs::path path = out / map_filename(cat, seed);
      save_terrain_map(path.string(), map);
      log << "wrote " << path.string() << "\n";
      ++written;
    }
  write_resolved(r, out);
  return written;
}

// -- collect ------------------------------------------------------------

struct DatasetStats {
  int runs = 0;
  long samples = 0;
  double duration_s = 0.0;
  double distance_m = 0.0;
  double vx_mean = 0.0;
  double vx_median = 0.0;
  double vx_max = 0.0;
  double yaw_rate_mean_abs = 0.0;
  double yaw_rate_max_abs = 0.0;
};

inline DatasetStats dataset_stats(const std::vector<RunLog>& runs, double dt) {
  DatasetStats st;
  st.runs = int(runs.size());
  std::vector<double> vx;
  for (const auto& run : runs) {
    st.samples += long(run.x.size());
    st.duration_s += double(run.x.size()) * dt;
    for (std::size_t k = 0; k + 1 < run.x.size(); ++k)
      st.distance_m += std::hypot(run.x[k + 1][kPx] - run.x[k][kPx],
                                  run.x[k + 1][kPy] - run.x[k][kPy]);
    for (const auto& x : run.x) {
      vx.push_back(x[kVx]);
      st.vx_max = std::max(st.vx_max, x[kVx]);
      st.yaw_rate_mean_abs += std::abs(x[kYawRate]);
      st.yaw_rate_max_abs = std::max(st.yaw_rate_max_abs, std::abs(x[kYawRate]));
    }
  }
  if (!vx.empty()) {
    double sum = 0.0;
    for (double v : vx) sum += v;
    st.vx_mean = sum / double(vx.size());
    st.yaw_rate_mean_abs /= double(vx.size());
    std::vector<double> sorted = vx;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    st.vx_median = n % 2 ? sorted[n / 2]
                         : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  }
  return st;
}

inline std::string format_dataset_stats(const DatasetStats& st) {
  std::ostringstream out;
  out << "dataset statistics\n";
  out << "  runs            " << st.runs << "\n";
  out << "  samples         " << st.samples << "\n";
  out << "  duration (s)    " << fmt(st.duration_s, 1) << "\n";
  out << "  distance (m)    " << fmt(st.distance_m, 1) << "\n";
  out << "  vx mean (m/s)   " << fmt(st.vx_mean) << "\n";
  out << "  vx median (m/s) " << fmt(st.vx_median) << "\n";
  out << "  vx max (m/s)    " << fmt(st.vx_max) << "\n";
  out << "  |r| mean (rad/s) " << fmt(st.yaw_rate_mean_abs) << "\n";
  out << "  |r| max (rad/s)  " << fmt(st.yaw_rate_max_abs) << "\n";
  return out.str();
}

// Drives the stock controller over randomized maps on the data-generation
// physics and logs what the onboard side would have seen: measured states,
// applied controls, sensed terrain. The deployment physics never appears
// here, so evaluation runs on a simulator the training data has not touched.
inline DatasetStats cmd_collect(const Config& cfg, std::ostream& log) {
  Resolved r(cfg);
  const fs::path out = r.gets("out", "runs/dataset");
  const int n_runs = r.geti("episodes", 8);
  const std::uint64_t seed = r.getseed("seed", 1);
  const std::uint64_t map_base = r.getseed("map_seed", 500);
  const double duration = r.getd("collect_duration", 40.0);
  fs::create_directories(out);

  EpisodeConfig ec = episode_config_from(&r);
  ec.sim = datagen_sim_params();
  ec.timeout = duration;
  const auto course = course_waypoints();  // full loop; collect runs long
  const OnboardModel model = model_for_configuration(&r, "baseline");
  const int threads = thread_count(&r);

  std::vector<RunLog> runs(std::size_t(std::max(0, n_runs)));
  if (n_runs <= 0) {
    log << "warning: collect asked for 0 episodes; nothing to do\n";
  } else {
    parallel_for(n_runs, threads, [&](int i) {
      const MapCategory cat = kAllCategories[std::size_t(i) % kAllCategories.size()];
      const TerrainMap map = generate_map(cat, map_base + std::uint64_t(i));
      EpisodeConfig run_ec = ec;
      run_ec.control_seed = seed + 7919ull * std::uint64_t(i + 1);
      run_ec.noise_seed = seed + 104729ull * std::uint64_t(i + 1);
      const auto ep = run_episode(map, model, course, run_ec);
      if (!ep) throw std::runtime_error("collect episode rejected its course");
      RunLog& run = runs[std::size_t(i)];
      run.id = i;
      for (const auto& st : ep->steps) {
        run.x.push_back(st.measured);
        run.u.push_back(st.u);
        run.y.push_back(st.y);
      }
    });
    for (int i = 0; i < n_runs; ++i) {
      std::ostringstream name;
      name << "run-" << std::setw(3) << std::setfill('0') << i << ".jsonl";
      save_run_log((out / name.str()).string(), runs[std::size_t(i)]);
    }
  }
  const DatasetStats st = dataset_stats(runs, ec.sim_dt);
  const std::string table = format_dataset_stats(st);
  log << table;
  write_text_file((out / "stats.txt").string(), table);
  write_resolved(r, out);
  return st;
}

// -- train --------------------------------------------------------------

inline std::vector<RunLog> load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir))
    throw std::runtime_error(dir.string() + ": not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("run-", 0) == 0 && e.path().extension() == ".jsonl")
      files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<RunLog> runs;
  for (std::size_t i = 0; i < files.size(); ++i)
    runs.push_back(load_run_log(files[i].string(), int(i)));
  return runs;
}

inline std::string history_csv(const std::vector<EpochStats>& history) {
  std::ostringstream out;
  out << "epoch,pretrain,mean_loss,wall_s,rejected_batches,diverged_segments\n";
  for (const auto& st : history)
    out << st.epoch << "," << (st.pretrain ? 1 : 0) << ","
        << fmt_exact(st.mean_loss) << "," << fmt(st.wall_s) << ","
        << st.rejected_batches << "," << st.diverged_segments << "\n";
  return out.str();
}

inline TrainResult cmd_train(const Config& cfg, std::ostream& log) {
  Resolved r(cfg);
  const fs::path dataset = r.gets("dataset", "runs/dataset");
  const fs::path out = r.gets("out", "runs/train");
  fs::create_directories(out);

  const auto runs = load_dataset(dataset);
  SliceConfig sc;
  sc.tau = r.geti("tau", 300);
  sc.horizon = r.geti("train_horizon", 100);
  sc.stride = r.geti("slice_stride", 400);
  int skipped = 0;
  const auto segs = slice_dataset(runs, sc, &skipped);
  log << "dataset: " << runs.size() << " runs, " << segs.size()
      << " segments (" << skipped << " runs too short)\n";
  if (segs.empty())
    throw std::runtime_error("dataset yields no training segments");

  MetaTrainConfig tc;
  tc.batch = r.geti("batch", 8);
  tc.epochs = r.geti("epochs", 8);
  tc.pretrain_epochs = r.geti("pretrain_epochs", 2);
  tc.lr_net = r.getd("lr_net", 1e-3);
  tc.lr_filter = r.getd("lr_filter", 1e-2);
  tc.lr_psi = r.getd("lr_psi", 1e-3);
  tc.seed = r.getseed("seed", 1);
  tc.loss.h = r.geti("adapt_steps", 10);
  tc.loss.beta = r.getd("train_decay", tc.loss.beta);
  if (sc.tau % tc.loss.h != 0)
    throw UsageError("tau must be a multiple of adapt_steps");

  const MetaParams init =
      init_meta_params(r.getseed("net_seed", 3), onboard_params(),
                       r.geti("net_hidden", 16), r.geti("net_mix", 8));
  const TrainResult res = train(segs, init, tc);
  for (const auto& st : res.history)
    log << "epoch " << st.epoch << (st.pretrain ? " (pretrain)" : "")
        << "  loss " << fmt(st.mean_loss, 4) << "  " << fmt(st.wall_s, 1)
        << "s  rejected " << st.rejected_batches << "  diverged "
        << st.diverged_segments << "\n";

  Checkpoint ck;
  ck.kind = "meta";
  ck.net = res.params.net;
  ck.psi = res.params.psi;
  ck.filter = filter_from_raw(res.params);
  save_checkpoint((out / "checkpoint.json").string(), ck);
  write_text_file((out / "history.csv").string(), history_csv(res.history));
  write_resolved(r, out);
  log << "checkpoint: " << (out / "checkpoint.json").string() << "\n";
  return res;
}

// -- evaluate -----------------------------------------------------------

inline std::string trajectory_csv(const EpisodeLog& log) {
  std::ostringstream out;
  out << "t,truth_px,truth_py,meas_px,meas_py,vx\n";
  for (const auto& st : log.steps)
    out << fmt(st.t) << "," << fmt_exact(st.truth[kPx]) << ","
        << fmt_exact(st.truth[kPy]) << "," << fmt_exact(st.measured[kPx])
        << "," << fmt_exact(st.measured[kPy]) << ","
        << fmt_exact(st.truth[kVx]) << "\n";
  return out.str();
}

inline std::string theta_csv(const EpisodeLog& log) {
  std::ostringstream out;
  out << "t,theta_norm\n";
  for (const auto& st : log.steps) {
    double n2 = 0.0;
    for (double v : st.theta) n2 += v * v;
    out << fmt(st.t) << "," << fmt_exact(std::sqrt(n2)) << "\n";
  }
  return out.str();
}

inline MetricsReport cmd_evaluate(const Config& cfg, std::ostream& log) {
  Resolved r(cfg);
  const fs::path out = r.gets("out", "runs/eval");
  const std::string configuration = r.gets("configuration", "baseline");
  const bool full_scale = r.getb("full_scale", false);
  const int episodes = r.geti("episodes", full_scale ? 25 : 5);
  if (episodes < 1) throw UsageError("evaluate needs episodes >= 1");
  const std::uint64_t seed = r.getseed("seed", 1);
  const std::uint64_t map_base = r.getseed("map_seed", 1000);
  const std::string maps_dir = r.gets("maps", "");
  const auto cats = categories_from(&r);
  const auto course = course_from(&r);
  const OnboardModel model = model_for_configuration(&r, configuration);
  const EpisodeConfig base_ec = episode_config_from(&r);
  const int threads = thread_count(&r);

  fs::create_directories(out / "plotdata");
  fs::create_directories(out / "episodes");

  struct Job {
    MapCategory cat;
    int episode;
    std::uint64_t map_seed;
  };
  std::vector<Job> jobs;
  for (const auto cat : cats)
    for (int e = 0; e < episodes; ++e)
      jobs.push_back({cat, e, map_base + std::uint64_t(e)});

  std::vector<EpisodeLog> logs(jobs.size());
  parallel_for(int(jobs.size()), threads, [&](int i) {
    const Job& job = jobs[std::size_t(i)];
    TerrainMap map;
    if (maps_dir.empty()) {
      map = generate_map(job.cat, job.map_seed);
    } else {
      map = load_terrain_map(
          (fs::path(maps_dir) / map_filename(job.cat, job.map_seed)).string());
    }
    EpisodeConfig ec = base_ec;
    ec.control_seed = seed + 7919ull * std::uint64_t(i + 1);
    ec.noise_seed = seed + 104729ull * std::uint64_t(i + 1);
    auto ep = run_episode(map, model, course, ec);
    if (!ep) throw std::runtime_error("evaluate episode rejected its course");
    logs[std::size_t(i)] = std::move(*ep);
  });

  MetricsReport rep;
  rep.configuration = configuration;
  rep.bootstrap_resamples = r.geti("bootstrap_resamples", 10000);
  rep.bootstrap_seed = r.getseed("bootstrap_seed", 12345);
  for (const auto cat : cats)
    rep.categories.push_back({category_name(cat), {}});
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const Job& job = jobs[i];
    const EpisodeLog& ep = logs[i];
    const std::size_t ci = i / std::size_t(episodes);
    rep.categories[ci].episodes.push_back(metrics_from_summary(
        ep.summary, job.episode, job.map_seed, base_ec.timeout));

    const std::string tag = std::string(category_name(job.cat)) + "-ep" +
                            std::to_string(job.episode);
    write_text_file((out / "plotdata" / ("traj-" + tag + ".csv")).string(),
                    trajectory_csv(ep));
    write_text_file((out / "plotdata" / ("theta-" + tag + ".csv")).string(),
                    theta_csv(ep));
    if (job.episode == 0)
      save_episode_log((out / "episodes" / (tag + ".jsonl")).string(), ep);
  }

  write_text_file((out / "metrics.csv").string(), metrics_csv(rep));
  write_text_file((out / "metrics.json").string(),
                  report_to_json(rep).dump(2) + "\n");
  const std::string table = report_text(rep);
  write_text_file((out / "report.txt").string(), table);
  write_resolved(r, out);
  log << table;
  return rep;
}

// -- compare ------------------------------------------------------------

inline Comparison cmd_compare(const std::vector<std::string>& report_dirs,
                              const Config& cfg, std::ostream& log) {
  if (report_dirs.size() < 2)
    throw UsageError("compare needs at least two report directories");
  Resolved r(cfg);
  const fs::path out = r.gets("out", "runs/compare");
  fs::create_directories(out / "plotdata");

  std::vector<MetricsReport> reps;
  for (const auto& dir : report_dirs) {
    const fs::path path = fs::path(dir) / "metrics.json";
    try {
      reps.push_back(report_from_json(json::parse(read_text_file(path.string()))));
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + ": " + e.what());
    }
  }
  const Comparison cmp = compare_reports(reps);

  // carry each report's plot data across, prefixed by its configuration
  for (std::size_t i = 0; i < report_dirs.size(); ++i) {
    const fs::path src = fs::path(report_dirs[i]) / "plotdata";
    if (!fs::is_directory(src)) continue;
    for (const auto& e : fs::directory_iterator(src)) {
      if (e.path().extension() != ".csv") continue;
      const fs::path dst =
          out / "plotdata" /
          (reps[i].configuration + "-" + e.path().filename().string());
      fs::copy_file(e.path(), dst, fs::copy_options::overwrite_existing);
    }
  }

  const std::string table = comparison_text(cmp);
  write_text_file((out / "report.txt").string(), table);
  write_text_file((out / "summary.json").string(),
                  comparison_to_json(cmp).dump(2) + "\n");
  write_resolved(r, out);
  log << table;
  return cmp;
}

}  // namespace metadapt
