#include "biasmech/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "biasmech/errors.hpp"

namespace biasmech {

namespace {

using nlohmann::json;

std::size_t line_of(std::string_view text, std::size_t byte) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) line += text[i] == '\n';
  return line;
}

Components components_from(const json& v, const std::string& key) {
  Components out;
  if (v.is_string()) {
    out = parse_components(v.get<std::string>());
  } else if (v.is_array() && !v.empty()) {
    for (const json& e : v) {
      if (!e.is_string()) throw ConfigError(key + ": entries must be mechanism names");
      out.push_back(parse_mechanism_kind(e.get<std::string>()));
    }
  } else {
    throw ConfigError(key + ": expected a mechanism name or a list of names");
  }
  return out;
}

json components_json(const Components& c) {
  if (c.size() == 1) return std::string(to_string(c.front()));
  json arr = json::array();
  for (MechanismKind k : c) arr.push_back(std::string(to_string(k)));
  return arr;
}

SelectionTable parse_table(const json& v) {
  SelectionTable t;
  if (v.is_array()) {
    if (v.size() != 4) throw ConfigError("selection_table: expected [p00, p01, p10, p11]");
    for (std::size_t i = 0; i < 4; ++i) t.p[i] = v[i].get<double>();
  } else if (v.is_object()) {
    static const char* names[4] = {"p00", "p01", "p10", "p11"};
    for (const auto& [k, val] : v.items()) {
      bool known = false;
      for (int i = 0; i < 4; ++i) {
        if (k == names[i]) {
          t.p[static_cast<std::size_t>(i)] = val.get<double>();
          known = true;
        }
      }
      if (!known) throw ConfigError("selection_table: unknown key '" + k + "'");
    }
    for (const char* n : names) {
      if (!v.contains(n)) throw ConfigError(std::string("selection_table: missing ") + n);
    }
  } else {
    throw ConfigError("selection_table: expected an array or an object");
  }
  return t;
}

template <typename T>
T get_as(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(key + ": wrong type");
  }
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known = {
      "mode",  "mechanism", "mechanisms", "d",         "n_rct", "n_os",     "n_val",
      "u_model", "selection_table", "p_range", "alpha", "model", "n_seeds", "base_seed",
      "smoothing", "l2", "grid", "oracle_p", "n_mc"};
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) throw ConfigError("unknown key '" + k + "'");
  }
  ExperimentConfig c;
  try {
    if (j.contains("mode")) c.mode = get_as<std::string>(j["mode"], "mode");
    if (j.contains("mechanism")) c.mechanism = components_from(j["mechanism"], "mechanism");
    if (j.contains("mechanisms")) {
      if (!j["mechanisms"].is_array()) throw ConfigError("mechanisms: expected a list");
      c.mechanisms.clear();
      for (const json& e : j["mechanisms"]) c.mechanisms.push_back(components_from(e, "mechanisms"));
    }
    if (j.contains("d")) c.d = get_as<std::size_t>(j["d"], "d");
    if (j.contains("n_rct")) c.n_rct = get_as<std::size_t>(j["n_rct"], "n_rct");
    if (j.contains("n_os")) c.n_os = get_as<std::size_t>(j["n_os"], "n_os");
    if (j.contains("n_val")) c.n_val = get_as<std::size_t>(j["n_val"], "n_val");
    if (j.contains("u_model")) c.u_model = parse_u_model(get_as<std::string>(j["u_model"], "u_model"));
    if (j.contains("selection_table") && !j["selection_table"].is_null()) {
      c.selection_table = parse_table(j["selection_table"]);
    }
    if (j.contains("p_range")) {
      const auto v = get_as<std::vector<double>>(j["p_range"], "p_range");
      if (v.size() != 2) throw ConfigError("p_range: expected [lo, hi]");
      c.p_range = {v[0], v[1]};
    }
    if (j.contains("alpha")) c.alpha = get_as<double>(j["alpha"], "alpha");
    if (j.contains("model")) c.model = parse_model_kind(get_as<std::string>(j["model"], "model"));
    if (j.contains("n_seeds")) c.n_seeds = get_as<std::size_t>(j["n_seeds"], "n_seeds");
    if (j.contains("base_seed")) c.base_seed = get_as<std::uint64_t>(j["base_seed"], "base_seed");
    if (j.contains("smoothing")) c.smoothing = get_as<double>(j["smoothing"], "smoothing");
    if (j.contains("l2")) c.l2 = get_as<double>(j["l2"], "l2");
    if (j.contains("grid")) {
      const json& g = j["grid"];
      if (!g.is_object()) throw ConfigError("grid: expected an object");
      for (const auto& [k, v] : g.items()) {
        if (k == "d") {
          c.grid.d = get_as<std::vector<std::size_t>>(v, "grid.d");
        } else if (k == "n_rct") {
          c.grid.n_rct = get_as<std::vector<std::size_t>>(v, "grid.n_rct");
        } else {
          throw ConfigError("grid: unknown key '" + k + "'");
        }
      }
    }
    if (j.contains("oracle_p")) c.oracle_p = get_as<std::vector<double>>(j["oracle_p"], "oracle_p");
    if (j.contains("n_mc")) c.n_mc = get_as<std::size_t>(j["n_mc"], "n_mc");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig parse_config_text(std::string_view text) {
  if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) return config_from_json(json::object());
  json j;
  try {
    j = json::parse(text.begin(), text.end(), nullptr, true, false);
  } catch (const json::parse_error& e) {
    throw ConfigError("config parse error at line " + std::to_string(line_of(text, e.byte)) +
                      ": " + e.what());
  }
  if (j.is_null()) j = json::object();
  return config_from_json(j);
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return config_from_json(json::object());
  return parse_config_text(text);
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["mode"] = c.mode;
  j["mechanism"] = components_json(c.mechanism);
  j["mechanisms"] = json::array();
  for (const auto& m : c.mechanisms) j["mechanisms"].push_back(components_json(m));
  j["d"] = c.d;
  j["n_rct"] = c.n_rct;
  j["n_os"] = c.n_os;
  j["n_val"] = c.n_val;
  j["u_model"] = std::string(to_string(c.u_model));
  j["selection_table"] = c.selection_table ? json(c.selection_table->p) : json();
  j["p_range"] = c.p_range;
  j["alpha"] = c.alpha;
  j["model"] = std::string(to_string(c.model));
  j["n_seeds"] = c.n_seeds;
  j["base_seed"] = c.base_seed;
  j["smoothing"] = c.smoothing;
  j["l2"] = c.l2;
  j["grid"] = {{"d", c.grid.d}, {"n_rct", c.grid.n_rct}};
  j["oracle_p"] = c.oracle_p;
  j["n_mc"] = c.n_mc;
  return j;
}

std::string serialize_config(const ExperimentConfig& c) { return config_to_json(c).dump(2) + "\n"; }

}  // namespace biasmech
