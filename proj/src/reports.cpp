#include "malab/reports.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace malab {

namespace {

[[noreturn]] void schema_error(const std::string& what) {
  throw FormatError("schema violation: " + what);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  for (auto line : split(text, '\n')) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

double parse_double(std::string_view s, const std::string& what) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError("cannot parse " + what + " value '" + std::string(s) + "'");
  }
  return v;
}

std::size_t parse_size(std::string_view s, const std::string& what) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError("cannot parse " + what + " value '" + std::string(s) + "'");
  }
  return v;
}

std::string provenance_lines(const Provenance& p,
                             const std::vector<std::pair<std::string, std::string>>& extra = {}) {
  std::string s;
  s += "# artifact_version=" + p.artifact_version + "\n";
  s += "# config_hash=" + p.config_hash + "\n";
  s += "# seed=" + std::to_string(p.seed) + "\n";
  s += "# bos_mode=" + p.bos_mode + "\n";
  for (const auto& [k, v] : extra) s += "# " + k + "=" + v + "\n";
  return s;
}

// Splits CSV text into comment key/values and data lines.
struct CsvText {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::string_view> rows;
};

CsvText read_csv(std::string_view text) {
  CsvText c;
  for (auto line : lines_of(text)) {
    if (line.front() == '#') {
      line.remove_prefix(1);
      while (!line.empty() && line.front() == ' ') line.remove_prefix(1);
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) continue;
      c.meta.emplace_back(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
    } else {
      c.rows.push_back(line);
    }
  }
  return c;
}

std::string meta_value(const CsvText& c, const std::string& key) {
  for (const auto& [k, v] : c.meta) {
    if (k == key) return v;
  }
  throw FormatError("missing provenance field '" + key + "'");
}

Provenance provenance_from_csv(const CsvText& c) {
  Provenance p;
  p.artifact_version = meta_value(c, "artifact_version");
  p.config_hash = meta_value(c, "config_hash");
  p.seed = parse_size(meta_value(c, "seed"), "seed");
  p.bos_mode = meta_value(c, "bos_mode");
  return p;
}

void check_header(std::string_view got, const std::vector<std::string>& expected) {
  const auto cols = split(got, ',');
  for (std::size_t i = 0; i < std::max(cols.size(), expected.size()); ++i) {
    if (i >= cols.size()) throw FormatError("missing column '" + expected[i] + "'");
    if (i >= expected.size()) throw FormatError("unknown column '" + std::string(cols[i]) + "'");
    if (cols[i] != expected[i]) {
      throw FormatError("unexpected column '" + std::string(cols[i]) + "', expected '" +
                        expected[i] + "'");
    }
  }
}

ojson parse_json(std::string_view text, const char* what) {
  try {
    return ojson::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string(what) + ": " + e.what());
  }
}

template <typename F>
auto with_json_errors(const char* what, F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string(what) + ": " + e.what());
  }
}

void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) schema_error(what + " is not finite");
}

}  // namespace

std::string config_hash(const ojson& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ojson Provenance::to_json() const {
  ojson j;
  j["artifact_version"] = artifact_version;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["bos_mode"] = bos_mode;
  return j;
}

Provenance Provenance::from_json(const ojson& j) {
  Provenance p;
  p.artifact_version = j.at("artifact_version").get<std::string>();
  p.config_hash = j.at("config_hash").get<std::string>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.bos_mode = j.at("bos_mode").get<std::string>();
  return p;
}

std::string bos_label(bool bos) { return bos ? "on" : "off"; }

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw InputError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// --- profile ---------------------------------------------------------------

std::string render_profile_csv(const ProfileReport& r) {
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const auto& p = r.rows[i];
    if (p.layer != i) schema_error("profile rows must list layers 0..L in order");
    for (double v : {p.top1, p.top2, p.top3, p.median}) require_finite(v, "profile value");
    if (!(p.top1 >= p.top2 && p.top2 >= p.top3 && p.top3 >= 0 && p.median >= 0)) {
      schema_error("profile row " + std::to_string(i) + " violates top1 >= top2 >= top3 >= 0");
    }
  }
  std::string s = provenance_lines(r.provenance);
  s += "layer,top1,top2,top3,median\n";
  for (const auto& p : r.rows) {
    s += std::to_string(p.layer) + "," + format_double(p.top1) + "," + format_double(p.top2) +
         "," + format_double(p.top3) + "," + format_double(p.median) + "\n";
  }
  return s;
}

void write_profile_csv(const std::filesystem::path& path, const ProfileReport& report) {
  write_file_atomic(path, render_profile_csv(report));
}

ProfileReport parse_profile_csv(std::string_view text) {
  auto csv = read_csv(text);
  if (csv.rows.empty()) throw FormatError("profile CSV has no header");
  check_header(csv.rows.front(), {"layer", "top1", "top2", "top3", "median"});
  ProfileReport r;
  r.provenance = provenance_from_csv(csv);
  for (std::size_t i = 1; i < csv.rows.size(); ++i) {
    auto cells = split(csv.rows[i], ',');
    if (cells.size() != 5) throw FormatError("profile row " + std::to_string(i) + " needs 5 cells");
    r.rows.push_back({parse_size(cells[0], "layer"), parse_double(cells[1], "top1"),
                      parse_double(cells[2], "top2"), parse_double(cells[3], "top3"),
                      parse_double(cells[4], "median")});
  }
  return r;
}

// --- locations -------------------------------------------------------------

std::string render_locations_json(const LocationsReport& r) {
  ojson j;
  j["provenance"] = r.provenance.to_json();
  j["layers"] = ojson::array();
  for (const auto& l : r.layers) {
    require_finite(l.max_abs, "max_abs");
    require_finite(l.median_abs, "median_abs");
    j["layers"].push_back({{"layer", l.layer},
                           {"flagged", l.flagged},
                           {"max_abs", l.max_abs},
                           {"median_abs", l.median_abs}});
  }
  j["locations"] = ojson::array();
  for (const auto& loc : r.locations) {
    require_finite(loc.value, "location value");
    j["locations"].push_back({{"layer", loc.layer},
                              {"token_pos", loc.token_pos},
                              {"feat_dim", loc.feat_dim},
                              {"value", loc.value}});
  }
  return j.dump(2) + "\n";
}

void write_locations_json(const std::filesystem::path& path, const LocationsReport& report) {
  write_file_atomic(path, render_locations_json(report));
}

LocationsReport parse_locations_json(std::string_view text) {
  const auto j = parse_json(text, "locations JSON");
  return with_json_errors("locations JSON", [&] {
    LocationsReport r;
    r.provenance = Provenance::from_json(j.at("provenance"));
    for (const auto& l : j.at("layers")) {
      r.layers.push_back({l.at("layer").get<std::size_t>(), l.at("flagged").get<bool>(),
                          l.at("max_abs").get<double>(), l.at("median_abs").get<double>()});
    }
    for (const auto& loc : j.at("locations")) {
      ActivationLocation a;
      a.layer = loc.at("layer").get<std::size_t>();
      a.token_pos = loc.at("token_pos").get<std::size_t>();
      a.feat_dim = loc.at("feat_dim").get<std::size_t>();
      a.value = loc.at("value").get<double>();
      r.locations.push_back(a);
    }
    return r;
  });
}

// --- mean table ------------------------------------------------------------

std::string mean_key(const LocationKey& key) {
  return std::to_string(key.layer) + "/" + std::to_string(key.feat_dim) + "/" +
         std::string(to_string(key.bucket));
}

LocationKey parse_mean_key(std::string_view key) {
  auto parts = split(key, '/');
  if (parts.size() != 3) throw FormatError("mean-table key '" + std::string(key) + "' malformed");
  return {parse_size(parts[0], "layer"), parse_size(parts[1], "feat_dim"), parse_bucket(parts[2])};
}

std::string render_mean_table_json(const MeanTable& t, const Provenance& provenance) {
  ojson j;
  j["provenance"] = provenance.to_json();
  j["corpus_id"] = t.corpus_id;
  j["n_samples"] = t.n_samples;
  j["bos_mode"] = bos_label(t.bos);
  j["no_massive_activations"] = t.no_massive_activations();
  j["first_emergence_layers"] = t.first_emergence_layers;
  j["entries"] = ojson::array();
  for (const auto& [key, e] : t.entries) {
    if (e.count < 1) schema_error("mean-table entry " + mean_key(key) + " has no observations");
    require_finite(e.mean, "mean-table mean");
    j["entries"].push_back({{"key", mean_key(key)}, {"mean", e.mean}, {"count", e.count}});
  }
  return j.dump(2) + "\n";
}

void write_mean_table_json(const std::filesystem::path& path, const MeanTable& table,
                           const Provenance& provenance) {
  write_file_atomic(path, render_mean_table_json(table, provenance));
}

MeanTable parse_mean_table_json(std::string_view text, Provenance* provenance) {
  const auto j = parse_json(text, "mean-table JSON");
  return with_json_errors("mean-table JSON", [&] {
    MeanTable t;
    if (provenance) *provenance = Provenance::from_json(j.at("provenance"));
    t.corpus_id = j.at("corpus_id").get<std::string>();
    t.n_samples = j.at("n_samples").get<std::size_t>();
    const auto bos = j.at("bos_mode").get<std::string>();
    if (bos != "on" && bos != "off") throw FormatError("mean-table bos_mode must be on or off");
    t.bos = bos == "on";
    for (const auto& l : j.at("first_emergence_layers")) {
      t.first_emergence_layers.insert(l.get<std::size_t>());
    }
    for (const auto& e : j.at("entries")) {
      const auto count = e.at("count").get<std::size_t>();
      if (count < 1) throw FormatError("mean-table entry with zero count");
      t.entries[parse_mean_key(e.at("key").get<std::string>())] = {e.at("mean").get<double>(),
                                                                    count};
    }
    if (j.at("no_massive_activations").get<bool>() != t.entries.empty()) {
      throw FormatError("mean-table marker disagrees with its entries");
    }
    return t;
  });
}

// --- heatmap ---------------------------------------------------------------

std::string render_heatmap_csv(const HeatmapReport& r) {
  const auto& m = r.heatmap;
  if (m.cells.size() != m.rows * m.cols) schema_error("heatmap cell count disagrees with shape");
  if (m.cols != m.rows + (r.has_bias_slot ? 1 : 0)) {
    schema_error("heatmap needs T columns, plus one for the bias slot");
  }
  if (r.quantity != "logit" && r.quantity != "prob") schema_error("heatmap quantity " + r.quantity);
  std::string s = provenance_lines(r.provenance, {{"layer", std::to_string(r.layer)},
                                                  {"quantity", r.quantity}});
  for (std::size_t c = 0; c < m.rows; ++c) s += (c ? ",k" : "k") + std::to_string(c);
  if (r.has_bias_slot) s += m.rows ? ",bias" : "bias";
  s += "\n";
  for (std::size_t q = 0; q < m.rows; ++q) {
    for (std::size_t c = 0; c < m.cols; ++c) {
      if (c) s += ",";
      const double v = m.at(q, c);
      const bool visible = c <= q || (r.has_bias_slot && c == m.rows);
      if (visible) {
        if (std::isinf(v)) schema_error("heatmap cell is infinite");
        if (!std::isnan(v)) s += format_double(v);
      } else if (!std::isnan(v)) {
        schema_error("heatmap masked cell holds a value");
      }
    }
    s += "\n";
  }
  return s;
}

void write_heatmap_csv(const std::filesystem::path& path, const HeatmapReport& report) {
  write_file_atomic(path, render_heatmap_csv(report));
}

HeatmapReport parse_heatmap_csv(std::string_view text) {
  auto csv = read_csv(text);
  if (csv.rows.empty()) throw FormatError("heatmap CSV has no header");
  HeatmapReport r;
  r.provenance = provenance_from_csv(csv);
  r.layer = parse_size(meta_value(csv, "layer"), "layer");
  r.quantity = meta_value(csv, "quantity");
  auto header = split(csv.rows.front(), ',');
  r.has_bias_slot = !header.empty() && header.back() == "bias";
  const std::size_t T_ = header.size() - (r.has_bias_slot ? 1 : 0);
  std::vector<std::string> expected;
  for (std::size_t c = 0; c < T_; ++c) expected.push_back("k" + std::to_string(c));
  if (r.has_bias_slot) expected.push_back("bias");
  check_header(csv.rows.front(), expected);
  if (csv.rows.size() - 1 != T_) {
    throw FormatError("heatmap has " + std::to_string(csv.rows.size() - 1) + " rows for " +
                      std::to_string(T_) + " key columns");
  }
  r.heatmap.rows = T_;
  r.heatmap.cols = header.size();
  for (std::size_t q = 0; q < T_; ++q) {
    auto cells = split(csv.rows[q + 1], ',');
    if (cells.size() != header.size()) throw FormatError("heatmap row " + std::to_string(q) + " is ragged");
    for (auto c : cells) {
      r.heatmap.cells.push_back(c.empty() ? std::numeric_limits<double>::quiet_NaN()
                                          : parse_double(c, "heatmap cell"));
    }
  }
  return r;
}

// --- concentration ---------------------------------------------------------

std::string render_concentration_json(const ConcentrationReport& r) {
  ojson j;
  j["provenance"] = r.provenance.to_json();
  j["layers"] = ojson::array();
  for (const auto& row : r.layers) {
    require_finite(row.first_token, "concentration");
    ojson e{{"layer", row.layer}, {"first_token", row.first_token}};
    e["bias_slot"] = row.bias_slot ? ojson(*row.bias_slot) : ojson(nullptr);
    j["layers"].push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

void write_concentration_json(const std::filesystem::path& path, const ConcentrationReport& r) {
  write_file_atomic(path, render_concentration_json(r));
}

ConcentrationReport parse_concentration_json(std::string_view text) {
  const auto j = parse_json(text, "concentration JSON");
  return with_json_errors("concentration JSON", [&] {
    ConcentrationReport r;
    r.provenance = Provenance::from_json(j.at("provenance"));
    for (const auto& e : j.at("layers")) {
      ConcentrationRow row;
      row.layer = e.at("layer").get<std::size_t>();
      row.first_token = e.at("first_token").get<double>();
      if (!e.at("bias_slot").is_null()) row.bias_slot = e.at("bias_slot").get<double>();
      r.layers.push_back(row);
    }
    return r;
  });
}

// --- run report ------------------------------------------------------------

std::string render_run_report_json(const RunReport& r) {
  ojson j;
  j["provenance"] = r.provenance.to_json();
  j["config"] = r.config;
  j["results"] = ojson::array();
  for (const auto& row : r.results) {
    if (row.bos_mode != "on" && row.bos_mode != "off") schema_error("bos_mode " + row.bos_mode);
    parse_intervention_mode(row.mode);
    if (!(row.ppl >= 1.0) || !std::isfinite(row.ppl)) schema_error("perplexity must be finite and >= 1");
    j["results"].push_back({{"dataset", row.dataset},
                            {"bos_mode", row.bos_mode},
                            {"mode", row.mode},
                            {"ppl", row.ppl},
                            {"misses", row.misses},
                            {"predicted_tokens", row.predicted_tokens}});
  }
  j["extra"] = r.extra;
  return j.dump(2) + "\n";
}

void write_run_report_json(const std::filesystem::path& path, const RunReport& report) {
  write_file_atomic(path, render_run_report_json(report));
}

RunReport parse_run_report_json(std::string_view text) {
  const auto j = parse_json(text, "run report JSON");
  return with_json_errors("run report JSON", [&] {
    RunReport r;
    r.provenance = Provenance::from_json(j.at("provenance"));
    r.config = j.at("config");
    for (const auto& e : j.at("results")) {
      r.results.push_back({e.at("dataset").get<std::string>(), e.at("bos_mode").get<std::string>(),
                           e.at("mode").get<std::string>(), e.at("ppl").get<double>(),
                           e.at("misses").get<std::size_t>(),
                           e.at("predicted_tokens").get<std::size_t>()});
    }
    r.extra = j.value("extra", ojson::object());
    return r;
  });
}

}  // namespace malab
