#pragma once

// Experiment metrics: per-episode rows, bootstrap confidence intervals on
// the aggregate means, and the CSV / JSON / plain-table emitters. Every
// aggregate is recomputable from the emitted per-episode rows.

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "metadapt/episode.hpp"

namespace metadapt {

struct EpisodeMetrics {
  int episode = 0;
  std::uint64_t map_seed = 0;
  bool completed = false;
  double completion_time = 0.0;  // the timeout when incomplete
  double avg_speed = 0.0;
  double pred_error = 0.0;  // mean open-loop endpoint error, m
  int pred_count = 0;
  int rollover_crossings = 0;
  double rollover_exceed_time = 0.0;
  double rollover_cost = 0.0;
};

inline EpisodeMetrics metrics_from_summary(const EpisodeSummary& s,
                                           int episode,
                                           std::uint64_t map_seed,
                                           double timeout) {
  EpisodeMetrics m;
  m.episode = episode;
  m.map_seed = map_seed;
  m.completed = s.completed;
  m.completion_time = s.completed ? s.duration : timeout;
  m.avg_speed = s.avg_speed;
  m.pred_error = s.pred_error_mean;
  m.pred_count = s.pred_count;
  m.rollover_crossings = s.rollover_crossings;
  m.rollover_exceed_time = s.rollover_exceed_time;
  m.rollover_cost = s.rollover_cost;
  return m;
}

// The scored columns, with their preferred direction. Everything that reads
// or writes per-metric data iterates this one list.
struct MetricColumn {
  const char* name;
  bool lower_is_better;
  double (*get)(const EpisodeMetrics&);
};

inline const std::vector<MetricColumn>& metric_columns() {
  static const std::vector<MetricColumn> cols = {
      {"completion_time", true, [](const EpisodeMetrics& m) { return m.completion_time; }},
      {"avg_speed", false, [](const EpisodeMetrics& m) { return m.avg_speed; }},
      {"pred_error", true, [](const EpisodeMetrics& m) { return m.pred_error; }},
      {"rollover_crossings", true, [](const EpisodeMetrics& m) { return double(m.rollover_crossings); }},
      {"rollover_exceed_time", true, [](const EpisodeMetrics& m) { return m.rollover_exceed_time; }},
      {"rollover_cost", true, [](const EpisodeMetrics& m) { return m.rollover_cost; }},
  };
  return cols;
}

// -- bootstrap ----------------------------------------------------------

struct Interval {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

// Percentile bootstrap of the sample mean at 95%: resample with
// replacement, take the 2.5th and 97.5th percentiles of the resampled
// means. Deterministic per seed.
inline Interval bootstrap_mean_ci(const std::vector<double>& values,
                                  int resamples, std::uint64_t seed) {
  if (values.empty())
    throw std::runtime_error("bootstrap over an empty sample");
  Interval out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / double(values.size());

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (double& m : means) {
    double acc = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) acc += values[pick(rng)];
    m = acc / double(values.size());
  }
  std::sort(means.begin(), means.end());
  out.lo = means[std::size_t(0.025 * double(resamples))];
  out.hi = means[std::size_t(0.975 * double(resamples)) - 1];
  return out;
}

// -- reports ------------------------------------------------------------

struct CategoryReport {
  std::string category;
  std::vector<EpisodeMetrics> episodes;
};

struct MetricsReport {
  std::string configuration;
  int bootstrap_resamples = 10000;
  std::uint64_t bootstrap_seed = 12345;
  std::vector<CategoryReport> categories;
};

inline Interval aggregate(const MetricsReport& rep, const CategoryReport& cat,
                          const MetricColumn& col) {
  std::vector<double> v;
  for (const auto& e : cat.episodes) v.push_back(col.get(e));
  return bootstrap_mean_ci(v, rep.bootstrap_resamples, rep.bootstrap_seed);
}

inline std::string fmt(double v, int prec = 3) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

// full-precision text so parsing the CSV back recovers the exact doubles
inline std::string fmt_exact(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

inline std::string metrics_csv(const MetricsReport& rep) {
  std::ostringstream out;
  out << "configuration,category,episode,map_seed,completed,pred_count";
  for (const auto& col : metric_columns()) out << "," << col.name;
  out << "\n";
  for (const auto& cat : rep.categories)
    for (const auto& e : cat.episodes) {
      out << rep.configuration << "," << cat.category << "," << e.episode
          << "," << e.map_seed << "," << (e.completed ? 1 : 0) << ","
          << e.pred_count;
      for (const auto& col : metric_columns()) out << "," << fmt_exact(col.get(e));
      out << "\n";
    }
  return out.str();
}

inline nlohmann::json report_to_json(const MetricsReport& rep) {
  nlohmann::json j;
  j["configuration"] = rep.configuration;
  j["bootstrap_resamples"] = rep.bootstrap_resamples;
  j["bootstrap_seed"] = rep.bootstrap_seed;
  j["categories"] = nlohmann::json::array();
  for (const auto& cat : rep.categories) {
    nlohmann::json cj;
    cj["category"] = cat.category;
    cj["episodes"] = nlohmann::json::array();
    for (const auto& e : cat.episodes) {
      nlohmann::json ej;
      ej["episode"] = e.episode;
      ej["map_seed"] = e.map_seed;
      ej["completed"] = e.completed;
      ej["pred_count"] = e.pred_count;
      for (const auto& col : metric_columns()) ej[col.name] = col.get(e);
      cj["episodes"].push_back(ej);
    }
    nlohmann::json agg;
    for (const auto& col : metric_columns()) {
      const Interval iv = aggregate(rep, cat, col);
      agg[col.name] = {{"mean", iv.mean}, {"lo", iv.lo}, {"hi", iv.hi}};
    }
    cj["aggregate"] = agg;
    j["categories"].push_back(cj);
  }
  return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport rep;
  rep.configuration = j.at("configuration").get<std::string>();
  rep.bootstrap_resamples = j.at("bootstrap_resamples").get<int>();
  rep.bootstrap_seed = j.at("bootstrap_seed").get<std::uint64_t>();
  for (const auto& cj : j.at("categories")) {
    CategoryReport cat;
    cat.category = cj.at("category").get<std::string>();
    for (const auto& ej : cj.at("episodes")) {
      EpisodeMetrics e;
      e.episode = ej.at("episode").get<int>();
      e.map_seed = ej.at("map_seed").get<std::uint64_t>();
      e.completed = ej.at("completed").get<bool>();
      e.pred_count = ej.at("pred_count").get<int>();
      e.completion_time = ej.at("completion_time").get<double>();
      e.avg_speed = ej.at("avg_speed").get<double>();
      e.pred_error = ej.at("pred_error").get<double>();
      e.rollover_crossings = int(ej.at("rollover_crossings").get<double>());
      e.rollover_exceed_time = ej.at("rollover_exceed_time").get<double>();
      e.rollover_cost = ej.at("rollover_cost").get<double>();
      cat.episodes.push_back(e);
    }
    rep.categories.push_back(std::move(cat));
  }
  return rep;
}

inline std::string report_text(const MetricsReport& rep) {
  std::ostringstream out;
  out << "configuration: " << rep.configuration << "\n";
  out << "bootstrap: " << rep.bootstrap_resamples << " resamples, 95% CI\n\n";
  for (const auto& cat : rep.categories) {
    out << "[" << cat.category << "]  episodes: " << cat.episodes.size()
        << "\n";
    out << "  " << std::left << std::setw(24) << "metric" << std::right
        << std::setw(12) << "mean" << std::setw(12) << "ci_lo" << std::setw(12)
        << "ci_hi" << "\n";
    for (const auto& col : metric_columns()) {
      const Interval iv = aggregate(rep, cat, col);
      out << "  " << std::left << std::setw(24) << col.name << std::right
          << std::setw(12) << fmt(iv.mean) << std::setw(12) << fmt(iv.lo)
          << std::setw(12) << fmt(iv.hi) << "\n";
    }
    int done = 0;
    for (const auto& e : cat.episodes) done += e.completed ? 1 : 0;
    out << "  completed " << done << "/" << cat.episodes.size() << "\n\n";
  }
  return out.str();
}

// -- comparisons ----------------------------------------------------------

struct ComparisonCell {
  Interval interval;
  double delta = 0.0;  // mean difference against the first report
  bool best = false;
};

struct ComparisonRow {
  std::string metric;
  int best_index = 0;
  std::vector<ComparisonCell> cells;  // one per report
};

struct ComparisonCategory {
  std::string category;
  std::vector<ComparisonRow> rows;
};

struct Comparison {
  std::vector<std::string> configurations;
  std::vector<ComparisonCategory> categories;
};

inline Comparison compare_reports(const std::vector<MetricsReport>& reps) {
  if (reps.size() < 2)
    throw std::runtime_error("compare needs at least two reports");
  // category sets must line up
  for (std::size_t r = 1; r < reps.size(); ++r) {
    std::vector<std::string> a, b;
    for (const auto& c : reps[0].categories) a.push_back(c.category);
    for (const auto& c : reps[r].categories) b.push_back(c.category);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a != b) {
      std::string msg = "report category mismatch:";
      for (const auto& s : a) msg += " " + s;
      msg += " vs";
      for (const auto& s : b) msg += " " + s;
      throw std::runtime_error(msg);
    }
  }

  Comparison cmp;
  for (const auto& r : reps) cmp.configurations.push_back(r.configuration);
  for (const auto& cat0 : reps[0].categories) {
    ComparisonCategory cc;
    cc.category = cat0.category;
    for (const auto& col : metric_columns()) {
      ComparisonRow row;
      row.metric = col.name;
      for (const auto& rep : reps) {
        const CategoryReport* cat = nullptr;
        for (const auto& c : rep.categories)
          if (c.category == cat0.category) cat = &c;
        ComparisonCell cell;
        cell.interval = aggregate(rep, *cat, col);
        row.cells.push_back(cell);
      }
      for (std::size_t r = 0; r < row.cells.size(); ++r) {
        row.cells[r].delta = row.cells[r].interval.mean - row.cells[0].interval.mean;
        const bool better = col.lower_is_better
                                ? row.cells[r].interval.mean <
                                      row.cells[row.best_index].interval.mean
                                : row.cells[r].interval.mean >
                                      row.cells[row.best_index].interval.mean;
        if (better) row.best_index = int(r);
      }
      for (std::size_t r = 0; r < row.cells.size(); ++r)
        row.cells[r].best = int(r) == row.best_index;
      cc.rows.push_back(std::move(row));
    }
    cmp.categories.push_back(std::move(cc));
  }
  return cmp;
}

inline std::string comparison_text(const Comparison& cmp) {
  std::ostringstream out;
  out << "reports:";
  for (const auto& c : cmp.configurations) out << " " << c;
  out << "\n\n";
  for (const auto& cat : cmp.categories) {
    out << "[" << cat.category << "]\n";
    out << "  " << std::left << std::setw(24) << "metric";
    for (const auto& c : cmp.configurations)
      out << std::right << std::setw(20) << c;
    out << "\n";
    for (const auto& row : cat.rows) {
      out << "  " << std::left << std::setw(24) << row.metric;
      for (const auto& cell : row.cells) {
        std::string v = fmt(cell.interval.mean);
        if (cell.best) v += " *";
        out << std::right << std::setw(20) << v;
      }
      out << "\n";
    }
    out << "\n";
  }
  out << "* best per row\n";
  return out.str();
}

inline nlohmann::json comparison_to_json(const Comparison& cmp) {
  nlohmann::json j;
  j["configurations"] = cmp.configurations;
  j["categories"] = nlohmann::json::array();
  for (const auto& cat : cmp.categories) {
    nlohmann::json cj;
    cj["category"] = cat.category;
    cj["rows"] = nlohmann::json::array();
    for (const auto& row : cat.rows) {
      nlohmann::json rj;
      rj["metric"] = row.metric;
      rj["best_index"] = row.best_index;
      rj["cells"] = nlohmann::json::array();
      for (const auto& cell : row.cells) {
        nlohmann::json e;
        e["mean"] = cell.interval.mean;
        e["lo"] = cell.interval.lo;
        e["hi"] = cell.interval.hi;
        e["delta"] = cell.delta;
        e["best"] = cell.best;
        rj["cells"].push_back(e);
      }
      cj["rows"].push_back(rj);
    }
    j["categories"].push_back(cj);
  }
  return j;
}

}  // namespace metadapt
