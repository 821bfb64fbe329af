#include "conefluct/io.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace conefluct {

using nlohmann::json;

namespace {

std::string position_of(std::string_view text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

json parse_json(std::string_view text, std::string_view source) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    std::ostringstream msg;
    msg << source << ": malformed JSON at " << position_of(text, e.byte == 0 ? 0 : e.byte - 1);
    throw Error(msg.str());
  }
}

[[noreturn]] void field_error(std::string_view source, std::string_view field, std::string_view what) {
  std::ostringstream msg;
  msg << source << ": field '" << field << "': " << what;
  throw Error(msg.str());
}

double as_number(const json& j, std::string_view source, std::string_view field) {
  if (!j.is_number()) field_error(source, field, "expected a number");
  return j.get<double>();
}

}  // namespace

MatrixLaw parse_law(std::string_view text, std::string_view source) {
  const json doc = parse_json(text, source);
  if (!doc.is_object()) throw Error(std::string(source) + ": law file must hold a JSON object");
  for (const auto& [key, _] : doc.items())
    if (key != "dim" && key != "atoms" && key != "weights" && key != "metadata")
      field_error(source, key, "unknown field");

  if (!doc.contains("dim") || !doc["dim"].is_number_integer() || doc["dim"].get<long>() < 1)
    field_error(source, "dim", "expected a positive integer");
  const std::size_t d = doc["dim"].get<std::size_t>();

  if (!doc.contains("atoms") || !doc["atoms"].is_array() || doc["atoms"].empty())
    field_error(source, "atoms", "expected a non-empty array of row-major matrices");
  std::vector<PositiveMatrix> atoms;
  for (std::size_t k = 0; k < doc["atoms"].size(); ++k) {
    const auto& a = doc["atoms"][k];
    const std::string name = "atoms[" + std::to_string(k) + "]";
    if (!a.is_array() || a.size() != d * d)
      field_error(source, name, "expected " + std::to_string(d * d) + " entries for dim " + std::to_string(d));
    std::vector<double> entries;
    for (std::size_t i = 0; i < a.size(); ++i)
      entries.push_back(as_number(a[i], source, name + "[" + std::to_string(i) + "]"));
    try {
      atoms.emplace_back(d, std::move(entries));
    } catch (const Error& e) {
      field_error(source, name, e.what());
    }
  }

  if (!doc.contains("weights") || !doc["weights"].is_array())
    field_error(source, "weights", "expected an array of probabilities");
  if (doc["weights"].size() != atoms.size())
    field_error(source, "weights", "expected " + std::to_string(atoms.size()) + " entries, one per atom");
  std::vector<double> weights;
  for (std::size_t k = 0; k < doc["weights"].size(); ++k)
    weights.push_back(as_number(doc["weights"][k], source, "weights[" + std::to_string(k) + "]"));

  std::map<std::string, std::string> metadata;
  if (doc.contains("metadata")) {
    if (!doc["metadata"].is_object()) field_error(source, "metadata", "expected an object of strings");
    for (const auto& [key, value] : doc["metadata"].items()) {
      if (!value.is_string()) field_error(source, "metadata." + key, "expected a string");
      metadata[key] = value.get<std::string>();
    }
  }

  try {
    return MatrixLaw(std::move(atoms), std::move(weights), std::move(metadata));
  } catch (const Error& e) {
    field_error(source, "weights", e.what());
  }
}

MatrixLaw load_law(const std::filesystem::path& path) { return parse_law(read_file(path), path.string()); }

std::string serialize_law(const MatrixLaw& law) {
  json doc;
  doc["dim"] = law.dim();
  json atoms = json::array();
  for (const auto& g : law.atoms()) atoms.push_back(std::vector<double>(g.entries().begin(), g.entries().end()));
  doc["atoms"] = atoms;
  doc["weights"] = law.weights();
  doc["metadata"] = law.metadata();
  return doc.dump(2) + "\n";
}

void save_law(const std::filesystem::path& path, const MatrixLaw& law) { write_file(path, serialize_law(law)); }

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  auto [end, ec] = std::to_chars(buf, buf + 16, value, 16);
  std::string s(buf, end);
  return std::string(16 - s.size(), '0') + s;
}

std::string law_fingerprint(const MatrixLaw& law) { return hex64(fnv1a64(serialize_law(law))); }

std::string format_double(double value) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, end);
}

std::string csv_field(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

CsvTable& CsvTable::row(std::vector<std::string> fields) {
  if (fields.size() != header_.size()) throw Error("CSV row width differs from header");
  rows_.push_back(std::move(fields));
  return *this;
}

std::string CsvTable::text() const {
  std::string out;
  auto line = [&out](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out += ',';
      out += csv_field(fields[i]);
    }
    out += "\r\n";
  };
  line(header_);
  for (const auto& r : rows_) line(r);
  return out;
}

void CsvTable::write(const std::filesystem::path& path) const { write_file(path, text()); }

namespace {

template <class T>
T get_as(const json& j, std::string_view source, std::string_view field) {
  if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
    if (!j.is_number_unsigned()) field_error(source, field, "expected a non-negative integer");
  } else if constexpr (std::is_integral_v<T>) {
    if (!j.is_number_integer()) field_error(source, field, "expected an integer");
  }
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    field_error(source, field, "has the wrong type");
  }
}

template <class T>
void read(const json& doc, std::string_view key, T& dst, std::string_view source) {
  if (doc.contains(key)) dst = get_as<T>(doc.at(key), source, key);
}

void positive(bool ok, std::string_view source, std::string_view field) {
  if (!ok) field_error(source, field, "must be positive");
}

json thresholds_json(const Thresholds& t) {
  return {{"ratio_lo", t.ratio_lo},
          {"ratio_hi", t.ratio_hi},
          {"ks_max", t.ks_max},
          {"ks_negative_min", t.ks_negative_min},
          {"negative_sigma_factor", t.negative_sigma_factor},
          {"min_survivors", t.min_survivors},
          {"ks_noise", t.ks_noise},
          {"slope_lo", t.slope_lo},
          {"slope_hi", t.slope_hi},
          {"z", t.z}};
}

}  // namespace

ExperimentConfig parse_config(std::string_view text, std::string_view source, const std::filesystem::path& base_dir) {
  const json doc = parse_json(text, source);
  if (!doc.is_object()) throw Error(std::string(source) + ": config must hold a JSON object");
  static const std::set<std::string> known = {
      "law", "start", "a", "seed", "workers", "out", "paths", "horizon", "n_values", "conditional_n",
      "V_schedule", "V_paths", "a_grid_sigma", "V_rel_tol", "grid_resolution", "h",
      "eig_tol", "max_iter", "nu_tol", "poisson_tol", "delta0", "p3_cap", "gamma_tol", "lyapunov_n",
      "lyapunov_paths", "sigma_n", "sigma_paths", "burn_in", "lags", "covariance_paths", "contraction_n",
      "harmonicity_paths", "lattice_t", "lattice_a_max_sigma", "lattice_paths", "gap_paths", "gap_steps",
      "thresholds"};
  for (const auto& [key, _] : doc.items())
    if (!known.contains(key)) field_error(source, key, "unknown field");

  ExperimentConfig c;
  if (!doc.contains("law") || !doc["law"].is_string()) field_error(source, "law", "expected a file path");
  c.law_path = doc["law"].get<std::string>();
  if (c.law_path.is_relative()) c.law_path = base_dir / c.law_path;

  if (doc.contains("start")) {
    const auto& s = doc["start"];
    if (s.is_string()) {
      if (s.get<std::string>() != "barycenter") field_error(source, "start", "expected \"barycenter\" or coordinates");
    } else {
      c.start = get_as<std::vector<double>>(s, source, "start");
    }
  }
  read(doc, "a", c.a, source);
  if (doc.contains("seed")) c.seed = get_as<std::uint64_t>(doc["seed"], source, "seed");
  read(doc, "workers", c.workers, source);
  if (doc.contains("out")) c.out_dir = get_as<std::string>(doc["out"], source, "out");
  read(doc, "paths", c.paths, source);
  read(doc, "horizon", c.horizon, source);
  read(doc, "n_values", c.n_values, source);
  read(doc, "conditional_n", c.conditional_n, source);
  read(doc, "V_schedule", c.V_schedule, source);
  read(doc, "V_paths", c.V_paths, source);
  read(doc, "a_grid_sigma", c.a_grid_sigma, source);
  read(doc, "V_rel_tol", c.V_rel_tol, source);
  read(doc, "grid_resolution", c.grid_resolution, source);
  read(doc, "h", c.h, source);
  read(doc, "eig_tol", c.eig_tol, source);
  read(doc, "max_iter", c.max_iter, source);
  read(doc, "nu_tol", c.nu_tol, source);
  read(doc, "poisson_tol", c.poisson_tol, source);
  read(doc, "delta0", c.delta0, source);
  read(doc, "p3_cap", c.p3_cap, source);
  read(doc, "gamma_tol", c.gamma_tol, source);
  read(doc, "lyapunov_n", c.lyapunov_n, source);
  read(doc, "lyapunov_paths", c.lyapunov_paths, source);
  read(doc, "sigma_n", c.sigma_n, source);
  read(doc, "sigma_paths", c.sigma_paths, source);
  read(doc, "burn_in", c.burn_in, source);
  read(doc, "lags", c.lags, source);
  read(doc, "covariance_paths", c.covariance_paths, source);
  read(doc, "contraction_n", c.contraction_n, source);
  read(doc, "harmonicity_paths", c.harmonicity_paths, source);
  read(doc, "lattice_t", c.lattice_t, source);
  read(doc, "lattice_a_max_sigma", c.lattice_a_max_sigma, source);
  read(doc, "lattice_paths", c.lattice_paths, source);
  read(doc, "gap_paths", c.gap_paths, source);
  read(doc, "gap_steps", c.gap_steps, source);

  if (doc.contains("thresholds")) {
    const auto& t = doc["thresholds"];
    if (!t.is_object()) field_error(source, "thresholds", "expected an object");
    const json defaults = thresholds_json(c.thresholds);
    for (const auto& [key, _] : t.items())
      if (!defaults.contains(key)) field_error(source, "thresholds." + key, "unknown field");
    auto& th = c.thresholds;
    read(t, "ratio_lo", th.ratio_lo, source);
    read(t, "ratio_hi", th.ratio_hi, source);
    read(t, "ks_max", th.ks_max, source);
    read(t, "ks_negative_min", th.ks_negative_min, source);
    read(t, "negative_sigma_factor", th.negative_sigma_factor, source);
    read(t, "min_survivors", th.min_survivors, source);
    read(t, "ks_noise", th.ks_noise, source);
    read(t, "slope_lo", th.slope_lo, source);
    read(t, "slope_hi", th.slope_hi, source);
    read(t, "z", th.z, source);
  }

  if (!(c.a >= 0.0)) field_error(source, "a", "must be >= 0");
  positive(c.workers >= 1, source, "workers");
  positive(c.paths >= 1, source, "paths");
  positive(c.horizon >= 1, source, "horizon");
  positive(c.V_paths >= 1, source, "V_paths");
  positive(c.grid_resolution >= 1, source, "grid_resolution");
  positive(c.max_iter >= 1, source, "max_iter");
  positive(c.p3_cap >= 1, source, "p3_cap");
  positive(c.lyapunov_n >= 1 && c.lyapunov_paths >= 2, source, "lyapunov_n/lyapunov_paths");
  positive(c.sigma_n >= 1 && c.sigma_paths >= 2, source, "sigma_n/sigma_paths");
  positive(c.burn_in >= 1, source, "burn_in");
  positive(c.covariance_paths >= 2, source, "covariance_paths");
  positive(c.contraction_n >= 1, source, "contraction_n");
  positive(c.harmonicity_paths >= 2 && c.lattice_paths >= 1, source, "harmonicity_paths/lattice_paths");
  positive(c.gap_paths >= 1 && c.gap_steps >= 1, source, "gap_paths/gap_steps");
  const auto schedule = [source](const std::vector<long>& v, std::string_view key) {
    if (v.empty()) field_error(source, key, "must not be empty");
    for (long n : v)
      if (n < 1) field_error(source, key, "every entry must be >= 1");
  };
  schedule(c.n_values, "n_values");
  schedule(c.conditional_n, "conditional_n");
  schedule(c.V_schedule, "V_schedule");
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_file(path), path.string(), path.parent_path());
}

std::string canonical_config(const ExperimentConfig& c) {
  json j = {{"law", c.law_path.filename().string()},
            {"start", c.start ? json(*c.start) : json("barycenter")},
            {"a", c.a},
            {"seed", c.seed ? json(*c.seed) : json(nullptr)},
            {"workers", c.workers},
            {"paths", c.paths},
            {"horizon", c.horizon},
            {"n_values", c.n_values},
            {"conditional_n", c.conditional_n},
            {"V_schedule", c.V_schedule},
            {"V_paths", c.V_paths},
            {"a_grid_sigma", c.a_grid_sigma},
            {"V_rel_tol", c.V_rel_tol},
            {"grid_resolution", c.grid_resolution},
            {"h", c.h},
            {"eig_tol", c.eig_tol},
            {"max_iter", c.max_iter},
            {"nu_tol", c.nu_tol},
            {"poisson_tol", c.poisson_tol},
            {"delta0", c.delta0},
            {"p3_cap", c.p3_cap},
            {"gamma_tol", c.gamma_tol},
            {"lyapunov_n", c.lyapunov_n},
            {"lyapunov_paths", c.lyapunov_paths},
            {"sigma_n", c.sigma_n},
            {"sigma_paths", c.sigma_paths},
            {"burn_in", c.burn_in},
            {"lags", c.lags},
            {"covariance_paths", c.covariance_paths},
            {"contraction_n", c.contraction_n},
            {"harmonicity_paths", c.harmonicity_paths},
            {"lattice_t", c.lattice_t},
            {"lattice_a_max_sigma", c.lattice_a_max_sigma},
            {"lattice_paths", c.lattice_paths},
            {"gap_paths", c.gap_paths},
            {"gap_steps", c.gap_steps},
            {"thresholds", thresholds_json(c.thresholds)}};
  return j.dump();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace conefluct
