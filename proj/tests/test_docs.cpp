#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

  std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  const fs::path root{SPENV_SOURCE_DIR};

  struct MapRow {
    std::string row, maths, operation, tests;
  };

  std::vector<std::string> split_cells(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    bool code = false;
    for (std::size_t i = 1; i < line.size(); ++i) {
      const char ch = line[i];
      if (ch == '`') code = !code;
      if (ch == '|' && !code) {
        cells.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    return cells;
  }

  std::vector<MapRow> map_rows() {
    std::vector<MapRow> rows;
    std::istringstream in(slurp(root / "docs" / "math_map.md"));
    std::string line;
    while (std::getline(in, line)) {
      if (line.rfind("| ", 0) != 0 || line.rfind("| Row", 0) == 0) continue;
      const auto c = split_cells(line);
      if (c.size() < 4) continue;
      rows.push_back({c[0], c[1], c[2], c[3]});
    }
    return rows;
  }

  std::set<std::string> code_tokens(const std::string& cell) {
    std::set<std::string> out;
    static const std::regex tick("`([^`]*)`");
    static const std::regex word("[A-Za-z_][A-Za-z0-9_]*");
    for (std::sregex_iterator it(cell.begin(), cell.end(), tick), end; it != end; ++it) {
      const std::string inner = (*it)[1];
      for (std::sregex_iterator w(inner.begin(), inner.end(), word); w != end; ++w)
        out.insert(w->str());
    }
    return out;
  }

  // suite -> test names declared anywhere under tests/
  std::map<std::string, std::set<std::string>> declared_tests() {
    std::map<std::string, std::set<std::string>> out;
    static const std::regex decl(R"(TEST(?:_F)?\(\s*(\w+)\s*,\s*(\w+)\s*\))");
    for (const auto& e : fs::directory_iterator(root / "tests")) {
      if (e.path().extension() != ".cpp") continue;
      const std::string text = slurp(e.path());
      for (std::sregex_iterator it(text.begin(), text.end(), decl), end; it != end; ++it)
        out[(*it)[1]].insert((*it)[2]);
    }
    return out;
  }

  // every Suite.Name or Suite.* reference in text must name a declared test
  std::vector<std::string> dangling_test_refs(const std::string& text) {
    static const auto tests = declared_tests();
    static const std::regex ref(R"(\b([A-Z][A-Za-z]+)\.([A-Za-z0-9]+\*?|\*))");
    std::vector<std::string> bad;
    for (std::sregex_iterator it(text.begin(), text.end(), ref), end; it != end; ++it) {
      const std::string suite = (*it)[1];
      std::string name = (*it)[2];
      const auto s = tests.find(suite);
      if (s == tests.end()) {
        bad.push_back(it->str());
        continue;
      }
      if (!name.empty() && name.back() == '*') {
        name.pop_back();
        bool any = false;
        for (const auto& t : s->second) any = any || t.rfind(name, 0) == 0;
        if (!any) bad.push_back(it->str());
      } else if (!s->second.count(name)) {
        bad.push_back(it->str());
      }
    }
    return bad;
  }

  const std::vector<std::string> operations = {
      "vec", "vech", "structural", "det0", "pinv", "proj", "qproj", "orth_complement",
      "pairwise_dist", "matern", "correlation_matrix", "whiten", "morans_i",
      "empirical_variogram", "center", "gls_beta", "moments", "loglik_full", "loglik_factored",
      "objective_logD", "grad_logD", "optimize_grassmann", "profile_theta", "fit", "select_u",
      "fisher_info", "psi_matrix", "envelope_avar", "avar_beta", "avar_beta_simplified",
      "variance_ratio", "predict", "predict_grid", "simulate", "locv_mspe", "compare",
      "asymptotic_variance_study", "cmd_fit", "cmd_predict", "cmd_simulate", "cmd_compare",
      "cmd_diagnose"};

}  // namespace

TEST(MathMap, EveryOperationHasExactlyOneRow) {
  const auto rows = map_rows();
  ASSERT_GT(rows.size(), 30u);
  for (const auto& op : operations) {
    int hits = 0;
    for (const auto& r : rows) hits += code_tokens(r.operation).count(op) ? 1 : 0;
    EXPECT_EQ(hits, 1) << op;
  }
}

TEST(MathMap, HasCoordinateObjectiveRow) {
  bool found = false;
  for (const auto& r : map_rows()) {
    if (r.row.find("coordinate objective") == std::string::npos) continue;
    found = true;
    EXPECT_TRUE(code_tokens(r.operation).count("objective_logD"));
    EXPECT_NE(r.maths.find("log det(Gamma1^T Sigma_res Gamma1)"), std::string::npos);
  }
  EXPECT_TRUE(found);
}

TEST(MathMap, TestReferencesResolve) {
  for (const auto& r : map_rows()) {
    EXPECT_FALSE(r.tests.empty()) << r.row;
    const auto bad = dangling_test_refs(r.tests);
    EXPECT_TRUE(bad.empty()) << r.row << ": " << (bad.empty() ? "" : bad.front());
  }
}

TEST(Deviations, ParsesWithRequiredFields) {
  const auto j = nlohmann::json::parse(slurp(root / "docs" / "deviations.json"));
  EXPECT_EQ(j.at("schema_version"), 1);
  const auto& entries = j.at("entries");
  ASSERT_TRUE(entries.is_array());
  ASSERT_FALSE(entries.empty());
  std::set<std::string> ids;
  for (const auto& e : entries) {
    for (const char* key : {"id", "location", "source_summary", "decision", "validation"}) {
      ASSERT_TRUE(e.contains(key)) << key;
      EXPECT_FALSE(e.at(key).get<std::string>().empty()) << key;
    }
    EXPECT_TRUE(ids.insert(e.at("id").get<std::string>()).second) << e.at("id");
  }
  EXPECT_TRUE(ids.count("matern-exponent"));
}

TEST(Deviations, ValidationReferencesResolve) {
  const auto j = nlohmann::json::parse(slurp(root / "docs" / "deviations.json"));
  for (const auto& e : j.at("entries")) {
    const auto bad = dangling_test_refs(e.at("validation").get<std::string>());
    EXPECT_TRUE(bad.empty()) << e.at("id") << ": " << (bad.empty() ? "" : bad.front());
  }
}
