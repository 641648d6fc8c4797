#pragma once

// Disk formats: versioned JSON checkpoints, JSON-lines run and episode logs,
// binary terrain maps with a JSON header, and the key=value config file the
// command line consumes. Doubles round-trip exactly through the JSON dumper,
// so rewritten files are byte-stable.

#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "metadapt/episode.hpp"
#include "metadapt/kalman.hpp"
#include "metadapt/network.hpp"
#include "metadapt/segments.hpp"
#include "metadapt/terrain.hpp"
#include "metadapt/vehicle_types.hpp"

namespace metadapt {

using nlohmann::json;

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kTerrainMagic = "TMAP1";

// -- low-level helpers -------------------------------------------------------

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path + ": cannot open for writing");
  f << text;
  if (!f) throw std::runtime_error(path + ": write failed");
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path + ": cannot open for reading");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

template <class T, std::size_t N>
json to_json_array(const std::array<T, N>& a) {
  json j = json::array();
  for (const T& v : a) j.push_back(v);
  return j;
}

template <class T, std::size_t N>
void from_json_array(const json& j, std::array<T, N>* a) {
  if (!j.is_array() || j.size() != N)
    throw std::runtime_error("array field has wrong length");
  for (std::size_t i = 0; i < N; ++i) (*a)[i] = j[i].get<T>();
}

// -- model checkpoints -------------------------------------------------------

// Everything evaluate needs to reconstruct an onboard stack: the residual
// net, the physical parameter vector, and the filter tuning.
struct Checkpoint {
  std::string kind;  // "stock" or "meta"
  NetParams net;
  VehicleParams psi;
  FilterParams filter;
};

inline json checkpoint_to_json(const Checkpoint& ck) {
  json j;
  j["version"] = kCheckpointVersion;
  j["kind"] = ck.kind;
  json net;
  net["hidden"] = ck.net.hidden;
  net["n_mix"] = ck.net.n_mix;
  visit_net_params(ck.net, [&](const char* name, const std::vector<double>& v) {
    net[name] = v;
  });
  j["net"] = net;
  json psi;
  visit_params(ck.psi, [&](const char* name, const double& v) { psi[name] = v; });
  j["psi"] = psi;
  json filter;
  filter["p0"] = std::vector<double>(ck.filter.p0.data(),
                                     ck.filter.p0.data() + ck.filter.p0.size());
  filter["q"] = std::vector<double>(ck.filter.q.data(),
                                    ck.filter.q.data() + ck.filter.q.size());
  std::vector<double> r;
  for (int i = 0; i < ck.filter.r.rows(); ++i)
    for (int k = 0; k < ck.filter.r.cols(); ++k) r.push_back(ck.filter.r(i, k));
  filter["r"] = r;
  filter["eps"] = ck.filter.eps;
  j["filter"] = filter;
  return j;
}

inline Checkpoint checkpoint_from_json(const json& j) {
  if (!j.contains("version") || j["version"].get<int>() != kCheckpointVersion)
    throw std::runtime_error("checkpoint version mismatch");
  Checkpoint ck;
  ck.kind = j.at("kind").get<std::string>();
  const json& net = j.at("net");
  ck.net.hidden = net.at("hidden").get<int>();
  ck.net.n_mix = net.at("n_mix").get<int>();
  visit_net_params(ck.net, [&](const char* name, std::vector<double>& v) {
    v = net.at(name).get<std::vector<double>>();
  });
  const json& psi = j.at("psi");
  visit_params(ck.psi, [&](const char* name, double& v) {
    v = psi.at(name).get<double>();
  });
  const json& filter = j.at("filter");
  const auto p0 = filter.at("p0").get<std::vector<double>>();
  const auto q = filter.at("q").get<std::vector<double>>();
  const auto r = filter.at("r").get<std::vector<double>>();
  if (p0.size() != q.size() || r.size() != 9)
    throw std::runtime_error("checkpoint filter blocks have wrong shapes");
  ck.filter.p0 = VecX<double>(int(p0.size()));
  ck.filter.q = VecX<double>(int(q.size()));
  for (std::size_t i = 0; i < p0.size(); ++i) {
    ck.filter.p0[int(i)] = p0[i];
    ck.filter.q[int(i)] = q[i];
  }
  ck.filter.r = MatX<double>(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) ck.filter.r(i, k) = r[std::size_t(3 * i + k)];
  ck.filter.eps = filter.at("eps").get<double>();
  if (int(p0.size()) != ck.net.theta_dim())
    throw std::runtime_error("checkpoint filter size disagrees with the net");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  write_text_file(path, checkpoint_to_json(ck).dump(2) + "\n");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  try {
    return checkpoint_from_json(json::parse(read_text_file(path)));
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

// -- run logs (training data) ------------------------------------------------

// One sample per line: {"t": s, "x": [...], "u": [...], "y": [...]}.
inline void save_run_log(const std::string& path, const RunLog& run) {
  std::ostringstream out;
  for (std::size_t k = 0; k < run.x.size(); ++k) {
    json j;
    j["t"] = double(k) * 0.02;
    j["x"] = to_json_array(run.x[k]);
    if (k < run.u.size()) j["u"] = to_json_array(run.u[k]);
    if (k < run.y.size()) j["y"] = to_json_array(run.y[k]);
    out << j.dump() << "\n";
  }
  write_text_file(path, out.str());
}

inline RunLog load_run_log(const std::string& path, int id) {
  RunLog run;
  run.id = id;
  std::istringstream in(read_text_file(path));
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      State x;
      from_json_array(j.at("x"), &x);
      run.x.push_back(x);
      if (j.contains("u")) {
        Control u;
        from_json_array(j.at("u"), &u);
        run.u.push_back(u);
      }
      if (j.contains("y")) {
        TerrainSample y;
        from_json_array(j.at("y"), &y);
        run.y.push_back(y);
      }
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " +
                               e.what());
    }
  }
  return run;
}

// -- episode logs --------------------------------------------------------

inline json summary_to_json(const EpisodeSummary& s) {
  json j;
  j["completed"] = s.completed;
  j["left_map"] = s.left_map;
  j["duration"] = s.duration;
  j["avg_speed"] = s.avg_speed;
  j["waypoints_reached"] = s.waypoints_reached;
  j["waypoints_total"] = s.waypoints_total;
  j["pred_error_mean"] = s.pred_error_mean;
  j["pred_count"] = s.pred_count;
  j["rollover_exceed_time"] = s.rollover_exceed_time;
  j["rollover_crossings"] = s.rollover_crossings;
  j["rollover_cost"] = s.rollover_cost;
  j["min_wheel_loading"] = s.min_wheel_loading;
  j["replans"] = s.replans;
  j["fallbacks"] = s.fallbacks;
  j["filter_resets"] = s.filter_resets;
  j["mean_plan_cost"] = s.mean_plan_cost;
  return j;
}

// Full step trace as JSON lines, preceded by one summary line.
inline void save_episode_log(const std::string& path, const EpisodeLog& log) {
  std::ostringstream out;
  json head;
  head["summary"] = summary_to_json(log.summary);
  json preds = json::array();
  for (const auto& p : log.predictions) {
    json pj;
    pj["t0"] = p.t0;
    pj["horizon"] = p.horizon;
    pj["error"] = p.error;
    preds.push_back(pj);
  }
  head["predictions"] = preds;
  out << head.dump() << "\n";
  for (const auto& st : log.steps) {
    json j;
    j["t"] = st.t;
    j["truth"] = to_json_array(st.truth);
    j["measured"] = to_json_array(st.measured);
    j["u"] = to_json_array(st.u);
    j["y"] = to_json_array(st.y);
    j["theta"] = st.theta;
    j["plan_cost"] = st.plan_cost;
    out << j.dump() << "\n";
  }
  write_text_file(path, out.str());
}

// -- terrain maps --------------------------------------------------------

// "TMAP1\n" + one JSON header line + three row-major float64 grids in file
// order height, friction, cost.
inline void save_terrain_map(const std::string& path, const TerrainMap& map) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path + ": cannot open for writing");
  json head;
  head["rows"] = map.height.rows;
  head["cols"] = map.height.cols;
  head["cell"] = map.height.cell;
  head["category"] = category_name(map.category);
  head["seed"] = map.seed;
  f << kTerrainMagic << "\n" << head.dump() << "\n";
  for (const Grid* g : {&map.height, &map.friction, &map.cost})
    f.write(reinterpret_cast<const char*>(g->v.data()),
            std::streamsize(g->v.size() * sizeof(double)));
  if (!f) throw std::runtime_error(path + ": write failed");
}

inline TerrainMap load_terrain_map(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path + ": cannot open for reading");
  std::string magic, header;
  std::getline(f, magic);
  std::getline(f, header);
  if (magic != kTerrainMagic)
    throw std::runtime_error(path + ": not a terrain map file");
  json head;
  try {
    head = json::parse(header);
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": bad header: " + e.what());
  }
  TerrainMap map;
  const int rows = head.at("rows").get<int>();
  const int cols = head.at("cols").get<int>();
  const double cell = head.at("cell").get<double>();
  const auto cat = parse_category(head.at("category").get<std::string>());
  if (!cat) throw std::runtime_error(path + ": unknown category in header");
  map.category = *cat;
  map.seed = head.at("seed").get<std::uint64_t>();
  for (Grid* g : {&map.height, &map.friction, &map.cost}) {
    *g = Grid(rows, cols, cell);
    f.read(reinterpret_cast<char*>(g->v.data()),
           std::streamsize(g->v.size() * sizeof(double)));
  }
  if (!f) throw std::runtime_error(path + ": truncated grid data");
  return map;
}

// -- config files --------------------------------------------------------

// Plain key=value lines; '#' starts a comment; blank lines ignored. Values
// keep everything after the first '=' so paths with '=' survive.
class Config {
 public:
  Config() = default;

  static Config parse(const std::string& text, const std::string& origin) {
    Config c;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      const auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error(origin + ":" + std::to_string(line_no) +
                                 ": expected key=value, got `" + line + "`");
      const std::string key = trim(line.substr(0, eq));
      if (key.empty())
        throw std::runtime_error(origin + ":" + std::to_string(line_no) +
                                 ": empty key");
      c.values_[key] = trim(line.substr(eq + 1));
    }
    return c;
  }

  static Config load(const std::string& path) {
    return parse(read_text_file(path), path);
  }

  void set(const std::string& key, const std::string& value) {
    values_[key] = value;
  }

  // "key=value" as passed on the command line
  void set_kv(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw std::runtime_error("--set expects key=value, got `" + kv + "`");
    values_[kv.substr(0, eq)] = kv.substr(eq + 1);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& dflt) const {
    const auto it = values_.find(key);
    return it == values_.end() ? dflt : it->second;
  }

  int get_int(const std::string& key, int dflt) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      std::size_t pos = 0;
      const int v = std::stoi(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw std::runtime_error("config key `" + key + "`: not an integer: `" +
                               it->second + "`");
    }
  }

  double get_double(const std::string& key, double dflt) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw std::runtime_error("config key `" + key + "`: not a number: `" +
                               it->second + "`");
    }
  }

  bool get_bool(const std::string& key, bool dflt) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw std::runtime_error("config key `" + key + "`: not a boolean: `" +
                             it->second + "`");
  }

  // sorted dump, written next to every run's outputs
  std::string serialize() const {
    std::ostringstream out;
    for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
    return out.str();
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace metadapt
