#pragma once

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fusedtree/errors.hpp"
#include "fusedtree/model.hpp"
#include "fusedtree/pipeline.hpp"
#include "fusedtree/response.hpp"
#include "fusedtree/tree.hpp"

namespace fusedtree {

/// Delimited text with one header row. Cells are kept as text until a column is requested.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  Index n_rows() const { return static_cast<Index>(rows.size()); }

  /// Position of `name` (exact, case-sensitive match).
  std::size_t column(const std::string& name) const {
    for (std::size_t k = 0; k < header.size(); ++k)
      if (header[k] == name) return k;
    auto lower = [](std::string s) {
      std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
      return s;
    };
    for (const auto& h : header)
      if (lower(h) == lower(name))
        throw DataError("column '" + name + "' not found (column names are case-sensitive; did you mean '" + h + "'?)");
    throw DataError("column '" + name + "' not found");
  }

  bool has(const std::string& name) const { return std::find(header.begin(), header.end(), name) != header.end(); }
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char delim, Index line_no) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char ch = line[k];
    if (quoted) {
      if (ch == '"') {
        if (k + 1 < line.size() && line[k + 1] == '"') {
          cur += '"';
          ++k;
        } else {
          quoted = false;
        }
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == delim) {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (quoted) throw DataError("unterminated quote on line " + std::to_string(line_no));
  out.push_back(std::move(cur));
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline bool looks_like_decimal_comma(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos || s.find('.') != std::string::npos) return false;
  std::size_t start = s[0] == '-' || s[0] == '+' ? 1 : 0;
  if (comma == start || comma + 1 >= s.size()) return false;
  for (std::size_t k = start; k < s.size(); ++k)
    if (k != comma && !std::isdigit(static_cast<unsigned char>(s[k]))) return false;
  return true;
}

}  // namespace detail

/// Parses a number; empty cells and NA / NaN read as NaN. Decimal commas are rejected.
inline double parse_number(const std::string& raw, const std::string& column, Index row) {
  const std::string s = detail::trim(raw);
  if (s.empty() || s == "NA" || s == "NaN" || s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (detail::looks_like_decimal_comma(s))
    throw DataError("value '" + s + "' in column '" + column + "' (row " + std::to_string(row + 1) +
                    ") uses a decimal comma; use '.' as the decimal separator");
  double v = 0.0;
  const char* first = s.data() + (s[0] == '+' ? 1 : 0);
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw DataError("value '" + s + "' in column '" + column + "' (row " + std::to_string(row + 1) + ") is not a number");
  return v;
}

inline Table read_table(std::istream& in, char delim = ',') {
  Table t;
  std::string line;
  Index line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!have_header) {
      if (detail::trim(line).empty()) continue;
      t.header = detail::split_line(line, delim, line_no);
      for (auto& h : t.header) h = detail::trim(h);
      for (std::size_t a = 0; a < t.header.size(); ++a)
        for (std::size_t b = a + 1; b < t.header.size(); ++b)
          if (t.header[a] == t.header[b]) throw DataError("duplicate column name '" + t.header[a] + "'");
      have_header = true;
      continue;
    }
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_line(line, delim, line_no);
    if (cells.size() != t.header.size()) {
      std::string hint;
      if (delim == ',' && cells.size() > t.header.size()) hint = " (decimal commas in a comma-delimited file?)";
      throw DataError("line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) + " fields, header has " +
                      std::to_string(t.header.size()) + hint);
    }
    t.rows.push_back(std::move(cells));
  }
  if (!have_header) throw DataError("input has no header row");
  return t;
}

inline Table read_table_file(const std::string& path, char delim = ',') {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open '" + path + "'");
  return read_table(in, delim);
}

inline Vector column_values(const Table& t, const std::string& name) {
  const std::size_t k = t.column(name);
  Vector v(t.n_rows());
  for (Index i = 0; i < t.n_rows(); ++i) v[i] = parse_number(t.rows[static_cast<std::size_t>(i)][k], name, i);
  return v;
}

inline Matrix column_matrix(const Table& t, const std::vector<std::string>& names) {
  Matrix m(t.n_rows(), static_cast<Index>(names.size()));
  for (std::size_t k = 0; k < names.size(); ++k) m.col(static_cast<Index>(k)) = column_values(t, names[k]);
  return m;
}

inline std::string to_string(ColumnKind k) {
  switch (k) {
    case ColumnKind::continuous: return "continuous";
    case ColumnKind::ordinal: return "ordinal";
    case ColumnKind::categorical: return "categorical";
  }
  return "?";
}

inline ColumnKind column_kind_from_string(const std::string& s) {
  if (s == "continuous") return ColumnKind::continuous;
  if (s == "ordinal") return ColumnKind::ordinal;
  if (s == "categorical") return ColumnKind::categorical;
  throw UsageError("unknown column kind '" + s + "'");
}

/// Which columns of the input play which role. Empty `omics` means every column that is
/// neither clinical nor response; with `omics_path` set, the omics columns come from that
/// file instead (rows matched by position).
struct DataSpec {
  Family family = Family::gaussian;
  std::string response;  // gaussian / binomial
  std::string time;      // cox
  std::string status;    // cox
  std::vector<std::string> clinical;
  std::vector<ColumnKind> kinds;  // per clinical column; empty: all continuous
  std::vector<std::string> omics;
  std::optional<std::string> omics_path;
  char delimiter = ',';

  std::vector<std::string> response_columns() const {
    if (family == Family::cox) return {time, status};
    return {response};
  }
};

/// Reads features and (unless `with_response` is false) the response.
inline Dataset load_dataset(const DataSpec& spec, const std::string& path, bool with_response = true) {
  const Table t = read_table_file(path, spec.delimiter);
  Dataset d;
  d.clinical_names = spec.clinical;
  if (!spec.kinds.empty() && spec.kinds.size() != spec.clinical.size())
    throw UsageError("number of column kinds differs from the number of clinical columns");
  d.kinds = spec.kinds.empty() ? std::vector<ColumnKind>(spec.clinical.size(), ColumnKind::continuous) : spec.kinds;
  const auto resp = spec.response_columns();
  for (const auto& c : spec.clinical)
    if (std::find(resp.begin(), resp.end(), c) != resp.end())
      throw UsageError("column '" + c + "' is both clinical and response");
  for (const auto& c : spec.omics) {
    if (std::find(spec.clinical.begin(), spec.clinical.end(), c) != spec.clinical.end())
      throw UsageError("column '" + c + "' is both clinical and omics");
    if (std::find(resp.begin(), resp.end(), c) != resp.end()) throw UsageError("column '" + c + "' is both omics and response");
  }
  d.Z = column_matrix(t, spec.clinical);

  if (spec.omics_path) {
    const Table o = read_table_file(*spec.omics_path, spec.delimiter);
    if (o.n_rows() != t.n_rows())
      throw DataError("omics file has " + std::to_string(o.n_rows()) + " rows, data file has " + std::to_string(t.n_rows()));
    d.omics_names = spec.omics.empty() ? o.header : spec.omics;
    d.X = column_matrix(o, d.omics_names);
  } else {
    if (spec.omics.empty()) {
      for (const auto& h : t.header) {
        const bool clinical = std::find(spec.clinical.begin(), spec.clinical.end(), h) != spec.clinical.end();
        const bool response = std::find(resp.begin(), resp.end(), h) != resp.end();
        if (!clinical && !response) d.omics_names.push_back(h);
      }
    } else {
      d.omics_names = spec.omics;
    }
    d.X = column_matrix(t, d.omics_names);
  }

  if (with_response) {
    switch (spec.family) {
      case Family::gaussian: d.response = Response::gaussian(column_values(t, spec.response)); break;
      case Family::binomial: d.response = Response::binomial(column_values(t, spec.response)); break;
      case Family::cox: d.response = Response::survival(column_values(t, spec.time), column_values(t, spec.status)); break;
    }
  } else {
    d.response.family = spec.family;
    d.response.y = Vector::Zero(t.n_rows());
    if (spec.family == Family::cox) d.response.status = Vector::Zero(t.n_rows());
  }
  if (!d.Z.allFinite()) throw DataError("clinical columns contain missing or non-numeric values");
  if (!d.X.allFinite()) throw DataError("omics columns contain missing or non-numeric values");
  if (!d.response.y.allFinite()) throw DataError("response contains missing values");
  return d;
}

/// Data spec that reads new data with the columns a model was fitted on.
inline DataSpec spec_for_model(const FusedTreeModel& m, char delimiter = ',',
                               std::optional<std::string> omics_path = std::nullopt) {
  DataSpec s;
  s.family = m.family;
  s.clinical = m.clinical_names;
  s.kinds = m.tree.kinds;
  s.omics = m.omics_names;
  s.omics_path = std::move(omics_path);
  s.delimiter = delimiter;
  if (m.family == Family::cox && m.response_names.size() == 2) {
    s.time = m.response_names[0];
    s.status = m.response_names[1];
  } else if (!m.response_names.empty()) {
    s.response = m.response_names[0];
  }
  return s;
}

// ---------------------------------------------------------------------------------------
// Model file

inline constexpr int model_format_version = 1;
inline constexpr const char* coefficient_ordering = "covariate-major, leaf fastest";

namespace detail {

using nlohmann::json;

inline json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline json to_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Vector vector_from(const json& a) {
  Vector v(static_cast<Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Index>(i)] = a[i].get<double>();
  return v;
}

inline std::string impurity_name(Impurity i) {
  switch (i) {
    case Impurity::mse: return "mse";
    case Impurity::gini: return "gini";
    case Impurity::ph_deviance: return "ph_deviance";
  }
  return "?";
}

inline Impurity impurity_from(const std::string& s) {
  if (s == "mse") return Impurity::mse;
  if (s == "gini") return Impurity::gini;
  if (s == "ph_deviance") return Impurity::ph_deviance;
  throw DataError("unknown impurity '" + s + "' in model file");
}

inline json tree_json(const Tree& t) {
  json nodes = json::array();
  for (const auto& n : t.nodes) {
    json j{{"leaf", n.leaf}, {"value", n.value}, {"n", n.n}, {"risk", n.risk}, {"events", n.events},
           {"exposure", n.exposure}, {"depth", n.depth}};
    if (n.leaf) {
      j["leaf_id"] = n.leaf_id;
    } else {
      j["left"] = n.left;
      j["right"] = n.right;
      j["covariate"] = n.rule.covariate;
      j["categorical"] = n.rule.categorical;
      if (n.rule.categorical) {
        j["left_levels"] = n.rule.left_levels;
        j["right_levels"] = n.rule.right_levels;
        j["unseen_left"] = n.rule.unseen_left;
      } else {
        j["threshold"] = n.rule.threshold;
      }
    }
    nodes.push_back(std::move(j));
  }
  json kinds = json::array();
  for (auto k : t.kinds) kinds.push_back(to_string(k));
  return json{{"impurity", impurity_name(t.impurity)}, {"kappa", t.kappa}, {"kinds", kinds}, {"nodes", nodes}};
}

inline Tree tree_from(const json& j) {
  Tree t;
  t.impurity = impurity_from(j.at("impurity").get<std::string>());
  t.kappa = j.at("kappa").get<double>();
  for (const auto& k : j.at("kinds")) t.kinds.push_back(column_kind_from_string(k.get<std::string>()));
  const auto& nodes = j.at("nodes");
  if (nodes.empty()) throw DataError("model file has an empty tree");
  for (const auto& n : nodes) {
    TreeNode node;
    node.leaf = n.at("leaf").get<bool>();
    node.value = n.at("value").get<double>();
    node.n = n.at("n").get<Index>();
    node.risk = n.at("risk").get<double>();
    node.events = n.at("events").get<double>();
    node.exposure = n.at("exposure").get<double>();
    node.depth = n.at("depth").get<int>();
    if (!node.leaf) {
      node.left = n.at("left").get<int>();
      node.right = n.at("right").get<int>();
      node.rule.covariate = n.at("covariate").get<Index>();
      node.rule.categorical = n.at("categorical").get<bool>();
      if (node.rule.categorical) {
        node.rule.left_levels = n.at("left_levels").get<std::vector<double>>();
        node.rule.right_levels = n.at("right_levels").get<std::vector<double>>();
        node.rule.unseen_left = n.at("unseen_left").get<bool>();
      } else {
        node.rule.threshold = n.at("threshold").get<double>();
      }
    }
    t.nodes.push_back(std::move(node));
  }
  const int n_nodes = static_cast<int>(t.nodes.size());
  for (const auto& node : t.nodes)
    if (!node.leaf && (node.left <= 0 || node.left >= n_nodes || node.right <= 0 || node.right >= n_nodes))
      throw DataError("model file tree has an invalid child index");
  t.renumber();
  return t;
}

}  // namespace detail

inline nlohmann::json model_to_json(const FusedTreeModel& m) {
  using detail::json;
  json j;
  j["format"] = "fusedtree-model";
  j["version"] = model_format_version;
  j["family"] = to_string(m.family);
  j["variant"] = to_string(m.variant);
  j["coefficient_ordering"] = coefficient_ordering;
  j["clinical_names"] = m.clinical_names;
  j["omics_names"] = m.omics_names;
  j["response_names"] = m.response_names;
  j["tree"] = detail::tree_json(m.tree);
  j["standardization"] = json{{"n_raw", m.omics.n_raw}, {"kept", m.omics.kept}, {"mean", detail::to_json(m.omics.mean)},
                              {"sd", detail::to_json(m.omics.sd)}};
  j["linear_clinical"] = json{{"columns", m.linear_columns}, {"centers", detail::to_json(m.linear_centers)}};
  j["c"] = detail::to_json(m.c);
  j["beta"] = detail::to_json(m.beta);
  j["lambda"] = m.lambda;
  j["alpha"] = detail::number_or_null(m.alpha);  // null: fully fused (alpha = infinity)
  j["removed"] = m.removed;
  if (m.family == Family::cox) {
    j["baseline"] = json{{"times", detail::to_json(m.baseline.times)}, {"cumhaz", detail::to_json(m.baseline.cumhaz)}};
    j["horizon"] = m.horizon;
  }
  j["metadata"] = json{{"seed", m.seed}, {"folds", m.folds}, {"cv_objective", detail::number_or_null(m.cv_objective)}};
  return j;
}

inline FusedTreeModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "fusedtree-model") throw DataError("not a fusedtree model file");
    const int version = j.at("version").get<int>();
    if (version != model_format_version) throw DataError("unsupported model file version " + std::to_string(version));
    if (j.at("coefficient_ordering").get<std::string>() != coefficient_ordering)
      throw DataError("model file uses an unknown coefficient ordering");
    FusedTreeModel m;
    m.family = family_from_string(j.at("family").get<std::string>());
    m.variant = variant_from_string(j.at("variant").get<std::string>());
    m.clinical_names = j.at("clinical_names").get<std::vector<std::string>>();
    m.omics_names = j.at("omics_names").get<std::vector<std::string>>();
    m.response_names = j.at("response_names").get<std::vector<std::string>>();
    m.tree = detail::tree_from(j.at("tree"));
    const auto& s = j.at("standardization");
    m.omics.n_raw = s.at("n_raw").get<Index>();
    m.omics.kept = s.at("kept").get<std::vector<Index>>();
    m.omics.mean = detail::vector_from(s.at("mean"));
    m.omics.sd = detail::vector_from(s.at("sd"));
    if (m.omics.mean.size() != m.omics.size() || m.omics.sd.size() != m.omics.size())
      throw DataError("standardization vectors have inconsistent lengths");
    const auto& lc = j.at("linear_clinical");
    m.linear_columns = lc.at("columns").get<std::vector<Index>>();
    m.linear_centers = detail::vector_from(lc.at("centers"));
    m.c = detail::vector_from(j.at("c"));
    m.beta = detail::vector_from(j.at("beta"));
    m.lambda = j.at("lambda").get<double>();
    m.alpha = j.at("alpha").is_null() ? std::numeric_limits<double>::infinity() : j.at("alpha").get<double>();
    m.removed = j.at("removed").get<std::vector<Index>>();
    if (m.family == Family::cox) {
      m.baseline.times = detail::vector_from(j.at("baseline").at("times"));
      m.baseline.cumhaz = detail::vector_from(j.at("baseline").at("cumhaz"));
      m.horizon = j.at("horizon").get<double>();
    }
    const auto& md = j.at("metadata");
    m.seed = md.at("seed").get<std::uint64_t>();
    m.folds = md.at("folds").get<int>();
    m.cv_objective = md.at("cv_objective").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                     : md.at("cv_objective").get<double>();
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model file: ") + e.what());
  }
}

inline std::string serialize_model(const FusedTreeModel& m) { return model_to_json(m).dump(2) + "\n"; }

inline FusedTreeModel deserialize_model(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model file is not valid JSON: ") + e.what());
  }
  return model_from_json(j);
}

inline void save_model(const FusedTreeModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write '" + path + "'");
  out << serialize_model(m);
}

inline FusedTreeModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open model file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_model(ss.str());
}

}  // namespace fusedtree
