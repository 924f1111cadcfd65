#ifndef SPENV_IO_HPP
#define SPENV_IO_HPP

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "spenv/envopt.hpp"
#include "spenv/evalsim.hpp"
#include "spenv/inference.hpp"
#include "spenv/model.hpp"
#include "spenv/predict.hpp"

/*
 * File formats.
 *
 * Dataset CSV: one header row, comma separated, '.' decimal point, UTF-8.
 * Two coordinate columns, r response columns and p covariate columns are
 * selected by name; other columns are ignored.
 *
 * Fit report: JSON object with a top-level "schema_version". Matrices are
 * arrays of rows. The training data are embedded so that a report alone is
 * enough to predict.
 */

namespace spenv::io {

  using json = nlohmann::json;

  inline constexpr int schema_version = 1;
  inline constexpr const char* software_version = "spenv 1.0.0";

  // -----------------------------------------------------------------------
  // Files

  /// Writes to a temporary sibling file, then renames it over `path`.
  inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw schema_error("cannot open '" + tmp.string() + "' for writing");
      out << content;
      out.flush();
      if (!out) throw schema_error("failed writing '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
      std::filesystem::remove(tmp);
      throw schema_error("cannot move output into place at '" + path.string() + "': " +
                         ec.message());
    }
  }

  inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw schema_error("cannot open '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  // -----------------------------------------------------------------------
  // CSV

  struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<int> line_numbers;  // source line of each row (1-based)

    int column(const std::string& name) const {
      for (std::size_t j = 0; j < header.size(); ++j)
        if (header[j] == name) return static_cast<int>(j);
      return -1;
    }
  };

  namespace detail {
    inline std::string trim(const std::string& s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return "";
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    }

    inline std::vector<std::string> split_line(const std::string& line, int lineno) {
      std::vector<std::string> out;
      std::string cur;
      bool quoted = false;
      for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
          if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
            cur += '"';
            ++i;
          } else if (ch == '"') {
            quoted = false;
          } else {
            cur += ch;
          }
        } else if (ch == '"') {
          quoted = true;
        } else if (ch == ',') {
          out.push_back(trim(cur));
          cur.clear();
        } else {
          cur += ch;
        }
      }
      if (quoted) throw schema_error("line " + std::to_string(lineno) + ": unterminated quote");
      out.push_back(trim(cur));
      return out;
    }

    inline std::string csv_escape(const std::string& s) {
      if (s.find_first_of(",\"\n") == std::string::npos) return s;
      std::string out = "\"";
      for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
      }
      return out + "\"";
    }
  }  // namespace detail

  inline CsvTable parse_csv(const std::string& text) {
    CsvTable t;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0)
        line.erase(0, 3);
      if (detail::trim(line).empty()) continue;
      auto fields = detail::split_line(line, lineno);
      if (t.header.empty()) {
        t.header = std::move(fields);
        continue;
      }
      if (fields.size() != t.header.size())
        throw schema_error("line " + std::to_string(lineno) + ": expected " +
                           std::to_string(t.header.size()) + " fields, found " +
                           std::to_string(fields.size()));
      t.rows.push_back(std::move(fields));
      t.line_numbers.push_back(lineno);
    }
    if (t.header.empty()) throw schema_error("CSV input is empty");
    return t;
  }

  inline CsvTable read_csv(const std::filesystem::path& path) {
    return parse_csv(read_file(path));
  }

  inline double parse_number(const std::string& s, int lineno, const std::string& col) {
    double v = 0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    if (!s.empty() && *b == '+') ++b;
    const auto res = std::from_chars(b, e, v);
    if (s.empty() || res.ec != std::errc() || res.ptr != e || !std::isfinite(v))
      throw schema_error("line " + std::to_string(lineno) + ", column '" + col +
                         "': not a finite number: '" + s + "'");
    return v;
  }

  inline std::string format_number(double v) {
    if (!std::isfinite(v)) return "NaN";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
  }

  /*! Column selection for datasets. Empty response/covariate lists select
   *  every column named Y<k> / X<k> in header order. */
  struct DataSchema {
    std::string coord1 = "s1";
    std::string coord2 = "s2";
    std::vector<std::string> responses;
    std::vector<std::string> covariates;
  };

  inline std::vector<std::string> columns_matching(const CsvTable& t, const std::string& prefix) {
    const std::regex re(prefix + "[0-9]+");
    std::vector<std::string> out;
    for (const auto& h : t.header)
      if (std::regex_match(h, re)) out.push_back(h);
    return out;
  }

  inline Matrix numeric_columns(const CsvTable& t, const std::vector<std::string>& cols) {
    Matrix m(static_cast<Index>(t.rows.size()), static_cast<Index>(cols.size()));
    std::string missing;
    std::vector<int> idx;
    for (const auto& c : cols) {
      const int j = t.column(c);
      if (j < 0) missing += (missing.empty() ? "" : ", ") + c;
      idx.push_back(j);
    }
    if (!missing.empty()) {
      std::string have;
      for (const auto& h : t.header) have += (have.empty() ? "" : ", ") + h;
      throw schema_error("missing column(s): " + missing + " (header has: " + have + ")");
    }
    for (std::size_t i = 0; i < t.rows.size(); ++i)
      for (std::size_t k = 0; k < cols.size(); ++k)
        m(static_cast<Index>(i), static_cast<Index>(k)) =
            parse_number(t.rows[i][static_cast<std::size_t>(idx[k])], t.line_numbers[i], cols[k]);
    return m;
  }

  inline SpatialDataset dataset_from_csv(const CsvTable& t, DataSchema schema) {
    if (schema.responses.empty()) schema.responses = columns_matching(t, "Y");
    if (schema.covariates.empty()) schema.covariates = columns_matching(t, "X");
    if (schema.responses.empty()) throw schema_error("no response columns selected");
    if (t.rows.empty()) throw schema_error("CSV has a header but no data rows");
    SpatialDataset ds;
    ds.loc = Locations(numeric_columns(t, {schema.coord1, schema.coord2}));
    ds.Y = numeric_columns(t, schema.responses);
    ds.X = numeric_columns(t, schema.covariates);
    ds.response_names = schema.responses;
    ds.covariate_names = schema.covariates;
    try {
      ds.validate();
    } catch (const invalid_argument& e) {
      throw schema_error(e.what());
    }
    return ds;
  }

  inline std::string dataset_to_csv(const SpatialDataset& ds) {
    SpatialDataset d = ds;
    d.default_names();
    std::ostringstream os;
    os << "s1,s2";
    for (const auto& n : d.response_names) os << ',' << detail::csv_escape(n);
    for (const auto& n : d.covariate_names) os << ',' << detail::csv_escape(n);
    os << '\n';
    for (Index i = 0; i < d.n(); ++i) {
      os << format_number(d.loc.x(i)) << ',' << format_number(d.loc.y(i));
      for (Index j = 0; j < d.r(); ++j) os << ',' << format_number(d.Y(i, j));
      for (Index j = 0; j < d.p(); ++j) os << ',' << format_number(d.X(i, j));
      os << '\n';
    }
    return os.str();
  }

  /// Prediction rows: coord1, coord2, response_name, predicted_mean, pred_sd.
  inline std::string predictions_to_csv(const Locations& loc, const Matrix& mean, const Matrix& sd,
                                        const std::vector<std::string>& names,
                                        const std::vector<char>* failed = nullptr) {
    std::ostringstream os;
    os << "coord1,coord2,response_name,predicted_mean,pred_sd\n";
    for (Index i = 0; i < loc.size(); ++i) {
      if (failed && (*failed)[static_cast<std::size_t>(i)]) continue;
      for (Index j = 0; j < mean.cols(); ++j)
        os << format_number(loc.x(i)) << ',' << format_number(loc.y(i)) << ','
           << detail::csv_escape(names[static_cast<std::size_t>(j)]) << ','
           << format_number(mean(i, j)) << ',' << format_number(sd(i, j)) << '\n';
    }
    return os.str();
  }

  // -----------------------------------------------------------------------
  // JSON

  inline json to_json(const Matrix& m) {
    json rows = json::array();
    for (Index i = 0; i < m.rows(); ++i) {
      json row = json::array();
      for (Index j = 0; j < m.cols(); ++j)
        row.push_back(std::isfinite(m(i, j)) ? json(m(i, j)) : json(nullptr));
      rows.push_back(std::move(row));
    }
    return rows;
  }

  inline json to_json(const Vector& v) {
    json a = json::array();
    for (Index i = 0; i < v.size(); ++i)
      a.push_back(std::isfinite(v(i)) ? json(v(i)) : json(nullptr));
    return a;
  }

  inline double json_number(const json& x) {
    if (x.is_null()) return std::nan("");
    if (!x.is_number()) throw schema_error("fit report: expected a number");
    return x.get<double>();
  }

  inline Matrix matrix_from_json(const json& j, Index rows, Index cols, const std::string& what) {
    if (!j.is_array() || static_cast<Index>(j.size()) != rows)
      throw schema_error("fit report: '" + what + "' has the wrong number of rows");
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
      const json& row = j[static_cast<std::size_t>(i)];
      if (!row.is_array() || static_cast<Index>(row.size()) != cols)
        throw schema_error("fit report: '" + what + "' has the wrong number of columns");
      for (Index k = 0; k < cols; ++k) m(i, k) = json_number(row[static_cast<std::size_t>(k)]);
    }
    return m;
  }

  inline Vector vector_from_json(const json& j, Index n, const std::string& what) {
    if (!j.is_array() || static_cast<Index>(j.size()) != n)
      throw schema_error("fit report: '" + what + "' has the wrong length");
    Vector v(n);
    for (Index i = 0; i < n; ++i) v(i) = json_number(j[static_cast<std::size_t>(i)]);
    return v;
  }

  struct FitReport {
    EnvelopeFit fit;
    SpatialDataset data;
    std::optional<InferenceReport> inference;
    std::optional<SelectionResult> selection;
    std::uint64_t seed = 0;
  };

  inline json report_to_json(const FitReport& rep) {
    const EnvelopeFit& f = rep.fit;
    SpatialDataset ds = rep.data;
    ds.default_names();
    json j;
    j["schema_version"] = schema_version;
    j["software"] = software_version;
    j["seed"] = rep.seed;
    j["method"] = f.method;
    j["n"] = ds.n();
    j["r"] = ds.r();
    j["p"] = ds.p();
    j["u"] = f.params.u;
    j["response_names"] = ds.response_names;
    j["covariate_names"] = ds.covariate_names;
    j["spatial"] = f.params.spatial;
    j["theta"] = {{"range", f.params.theta.range},
                  {"smoothness", f.params.theta.smoothness},
                  {"nugget", f.params.theta.nugget}};
    j["alpha"] = to_json(f.alpha);
    j["beta"] = to_json(f.beta);
    j["Gamma1"] = to_json(f.params.Gamma1);
    j["Gamma0"] = to_json(f.params.Gamma0);
    j["eta"] = to_json(f.params.eta);
    j["Omega1"] = to_json(f.params.Omega1);
    j["Omega0"] = to_json(f.params.Omega0);
    j["V0"] = to_json(f.V0);
    j["V1"] = to_json(f.V1);
    j["loglik"] = f.loglik;
    j["converged"] = f.converged;
    j["n_iter"] = f.n_iter;
    j["theta_at_boundary"] = f.theta_at_boundary;
    j["line_search_warning"] = f.line_search_warning;
    json tr = json::array();
    for (const auto& t : f.trace)
      tr.push_back({{"objective", t.objective},
                    {"change", std::isfinite(t.change) ? json(t.change) : json(nullptr)},
                    {"range", t.range},
                    {"smoothness", t.smoothness}});
    j["trace"] = tr;
    if (rep.inference) {
      j["inference"] = {{"se_beta", to_json(rep.inference->se_beta)},
                        {"avar_beta", to_json(rep.inference->avar_beta)},
                        {"dominance_min_eig", rep.inference->dominance_min_eig},
                        {"se_scaling", "sqrt(diag(avar_beta) / n)"}};
    }
    if (rep.selection) {
      json tab = json::array();
      for (const auto& row : rep.selection->table)
        tab.push_back({{"u", row.u},
                       {"mspe", std::isfinite(row.mspe) ? json(row.mspe) : json(nullptr)},
                       {"error", row.error}});
      j["selection"] = {{"u_best", rep.selection->u_best}, {"table", tab}};
    }
    j["data"] = {{"coords", to_json(ds.loc.coords())}, {"Y", to_json(ds.Y)}, {"X", to_json(ds.X)}};
    return j;
  }

  inline FitReport report_from_json(const json& j) {
    try {
      if (!j.is_object() || !j.contains("schema_version"))
        throw schema_error("fit report: missing schema_version");
      if (j.at("schema_version").get<int>() != schema_version)
        throw schema_error("fit report: unsupported schema_version");
      FitReport rep;
      const Index n = j.at("n").get<Index>(), r = j.at("r").get<Index>(),
                  p = j.at("p").get<Index>(), u = j.at("u").get<Index>();
      if (n < 1 || r < 1 || p < 0 || u < 1 || u > r) throw schema_error("fit report: bad dimensions");
      rep.seed = j.value("seed", std::uint64_t{0});
      EnvelopeFit& f = rep.fit;
      f.method = j.at("method").get<std::string>();
      f.params.u = u;
      f.params.spatial = j.at("spatial").get<bool>();
      f.params.theta.range = j.at("theta").at("range").get<double>();
      f.params.theta.smoothness = j.at("theta").at("smoothness").get<double>();
      f.params.theta.nugget = j.at("theta").at("nugget").get<double>();
      f.alpha = vector_from_json(j.at("alpha"), r, "alpha");
      f.beta = matrix_from_json(j.at("beta"), r, p, "beta");
      f.params.Gamma1 = matrix_from_json(j.at("Gamma1"), r, u, "Gamma1");
      f.params.Gamma0 = r - u > 0 ? matrix_from_json(j.at("Gamma0"), r, r - u, "Gamma0")
                                  : Matrix(r, 0);
      f.params.eta = u > 0 && p > 0 ? matrix_from_json(j.at("eta"), u, p, "eta") : Matrix(u, p);
      f.params.Omega1 = matrix_from_json(j.at("Omega1"), u, u, "Omega1");
      f.params.Omega0 = r - u > 0 ? matrix_from_json(j.at("Omega0"), r - u, r - u, "Omega0")
                                  : Matrix(0, 0);
      f.V0 = matrix_from_json(j.at("V0"), r, r, "V0");
      f.V1 = matrix_from_json(j.at("V1"), r, r, "V1");
      f.loglik = j.at("loglik").get<double>();
      f.converged = j.at("converged").get<bool>();
      f.n_iter = j.at("n_iter").get<int>();
      f.theta_at_boundary = j.value("theta_at_boundary", false);
      f.line_search_warning = j.value("line_search_warning", false);
      for (const auto& t : j.at("trace"))
        f.trace.push_back({t.at("objective").get<double>(), json_number(t.at("change")),
                           t.at("range").get<double>(), t.at("smoothness").get<double>()});
      if (j.contains("inference")) {
        InferenceReport inf;
        inf.se_beta = matrix_from_json(j["inference"].at("se_beta"), r, p, "se_beta");
        inf.avar_beta = matrix_from_json(j["inference"].at("avar_beta"), r * p, r * p, "avar_beta");
        inf.dominance_min_eig = j["inference"].at("dominance_min_eig").get<double>();
        rep.inference = inf;
      }
      if (j.contains("selection")) {
        SelectionResult sel;
        sel.u_best = j["selection"].at("u_best").get<Index>();
        for (const auto& row : j["selection"].at("table"))
          sel.table.push_back({row.at("u").get<Index>(), json_number(row.at("mspe")),
                               row.at("error").get<std::string>()});
        rep.selection = sel;
      }
      SpatialDataset& ds = rep.data;
      ds.loc = Locations(matrix_from_json(j.at("data").at("coords"), n, 2, "data.coords"));
      ds.Y = matrix_from_json(j.at("data").at("Y"), n, r, "data.Y");
      ds.X = p > 0 ? matrix_from_json(j.at("data").at("X"), n, p, "data.X") : Matrix(n, 0);
      ds.response_names = j.at("response_names").get<std::vector<std::string>>();
      ds.covariate_names = j.at("covariate_names").get<std::vector<std::string>>();
      ds.validate();
      return rep;
    } catch (const json::exception& e) {
      throw schema_error(std::string("fit report: ") + e.what());
    } catch (const invalid_argument& e) {
      throw schema_error(std::string("fit report: ") + e.what());
    }
  }

  inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

  inline json truth_to_json(const SimTruth& t, const SimConfig& cfg) {
    return {{"schema_version", schema_version},
            {"seed", cfg.rng_seed},
            {"scenario", cfg.scenario},
            {"n", cfg.n},
            {"r", cfg.r},
            {"p", cfg.p},
            {"u", cfg.u},
            {"sampling", cfg.sampling == Sampling::grid ? "grid" : "random"},
            {"independent", t.independent},
            {"theta",
             {{"range", t.theta.range}, {"smoothness", t.theta.smoothness}, {"scale", t.theta.scale}}},
            {"Gamma1", to_json(t.Gamma1)},
            {"Gamma0", to_json(t.Gamma0)},
            {"eta", to_json(t.eta)},
            {"beta", to_json(t.beta)},
            {"Omega1", to_json(t.Omega1)},
            {"Omega0", to_json(t.Omega0)},
            {"V", to_json(t.V)}};
  }

}  // namespace spenv::io

#endif  // SPENV_IO_HPP
