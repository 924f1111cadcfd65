// Command-line front end: fit, predict, simulate, compare, diagnose and
// variance-study subcommands over the spenv library.

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "spenv/io.hpp"
#include "spenv/spenv.hpp"

namespace {

  using namespace spenv;
  using io::json;

  constexpr int exit_ok = 0;
  constexpr int exit_schema = 2;
  constexpr int exit_numerical = 3;

  struct OptimizerFlags {
    double delta = 1e-6;
    int max_outer = 200;
    int restarts = 5;
    double nugget = 1e-10;
    double fixed_smoothness = 0;  // 0: estimate
    std::string theta_update = "profiled";

    void add(CLI::App* app) {
      app->add_option("--delta", delta, "convergence tolerance")->capture_default_str();
      app->add_option("--max-outer", max_outer, "maximum outer iterations")->capture_default_str();
      app->add_option("--restarts", restarts, "random Grassmann restarts")->capture_default_str();
      app->add_option("--nugget", nugget, "diagonal ridge on correlation matrices")
          ->capture_default_str();
      app->add_option("--fixed-smoothness", fixed_smoothness,
                      "hold the Matern smoothness fixed (0 = estimate)")
          ->capture_default_str();
      app->add_option("--theta-update", theta_update, "profiled | alternating")
          ->check(CLI::IsMember({"profiled", "alternating"}))
          ->capture_default_str();
    }

    OptimizerConfig build(std::uint64_t seed) const {
      OptimizerConfig c;
      c.delta = delta;
      c.max_outer = max_outer;
      c.n_restarts = restarts;
      c.nugget = nugget;
      c.rng_seed = seed;
      if (fixed_smoothness > 0) c.fixed_smoothness = fixed_smoothness;
      c.theta_update = theta_update == "alternating" ? ThetaUpdate::alternating
                                                     : ThetaUpdate::profiled;
      c.validate();
      return c;
    }
  };

  struct SchemaFlags {
    std::string coords = "s1,s2";
    std::vector<std::string> responses;
    std::vector<std::string> covariates;

    void add(CLI::App* app) {
      app->add_option("--coords", coords, "coordinate column names 'a,b'")->capture_default_str();
      app->add_option("--responses", responses, "response columns (default: Y1, Y2, ...)")
          ->delimiter(',');
      app->add_option("--covariates", covariates, "covariate columns (default: X1, X2, ...)")
          ->delimiter(',');
    }

    io::DataSchema build() const {
      io::DataSchema s;
      const auto comma = coords.find(',');
      if (comma == std::string::npos) throw schema_error("--coords expects two names 'a,b'");
      s.coord1 = coords.substr(0, comma);
      s.coord2 = coords.substr(comma + 1);
      s.responses = responses;
      s.covariates = covariates;
      return s;
    }
  };

  std::vector<double> parse_list(const std::string& s, std::size_t expected, const char* what) {
    std::vector<double> v;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) v.push_back(io::parse_number(io::detail::trim(item), 0, what));
    if (v.size() != expected)
      throw schema_error(std::string(what) + ": expected " + std::to_string(expected) + " values");
    return v;
  }

  void print_matrix(std::ostream& os, const std::string& title, const Matrix& m,
                    const std::vector<std::string>& row_names,
                    const std::vector<std::string>& col_names) {
    os << title << "\n";
    os << std::setw(14) << "";
    for (const auto& c : col_names) os << std::setw(14) << c;
    os << "\n";
    for (Index i = 0; i < m.rows(); ++i) {
      os << std::setw(14) << (static_cast<std::size_t>(i) < row_names.size() ? row_names[i] : "");
      for (Index j = 0; j < m.cols(); ++j) os << std::setw(14) << std::setprecision(6) << m(i, j);
      os << "\n";
    }
  }

  void print_summary(const io::FitReport& rep) {
    const auto& f = rep.fit;
    const auto& ds = rep.data;
    std::cout << "method " << f.method << "  n=" << ds.n() << " r=" << ds.r() << " p=" << ds.p()
              << " u=" << f.params.u << "\n";
    if (f.params.spatial)
      std::cout << "theta: range=" << f.params.theta.range
                << " smoothness=" << f.params.theta.smoothness
                << (f.theta_at_boundary ? " (at a bound)" : "") << "\n";
    std::cout << "loglik " << std::setprecision(10) << f.loglik << "  iterations " << f.n_iter
              << (f.converged ? "  converged" : "  NOT converged") << "\n";
    std::vector<std::string> dirs;
    for (Index k = 0; k < f.params.u; ++k) dirs.push_back("dir" + std::to_string(k + 1));
    print_matrix(std::cout, "direction estimates (Gamma1):", f.params.Gamma1, ds.response_names, dirs);
    print_matrix(std::cout, "beta:", f.beta, ds.response_names, ds.covariate_names);
    if (rep.inference)
      print_matrix(std::cout, "standard errors of beta:", rep.inference->se_beta,
                   ds.response_names, ds.covariate_names);
    if (rep.selection) {
      std::cout << "dimension selection (MSPE):\n";
      for (const auto& row : rep.selection->table)
        std::cout << "  u=" << row.u << "  " << row.mspe
                  << (row.error.empty() ? "" : "  error: " + row.error) << "\n";
      std::cout << "selected u=" << rep.selection->u_best << "\n";
    }
  }

  std::string comparison_csv(const ComparisonResult& res, const SimConfig& cfg) {
    std::ostringstream os;
    os << "method,mean_locv,sd_locv,n_ok,n_failed,scenario,n,reps\n";
    for (const auto& row : res.rows)
      os << row.method << ',' << io::format_number(row.mean_locv) << ','
         << io::format_number(row.sd_locv) << ',' << row.n_ok << ',' << row.n_failed << ','
         << cfg.scenario << ',' << cfg.n << ',' << cfg.n_reps << "\n";
    return os.str();
  }

  json comparison_json(const ComparisonResult& res, const SimConfig& cfg) {
    json rows = json::array();
    for (std::size_t m = 0; m < res.rows.size(); ++m) {
      const auto& row = res.rows[m];
      json per = json::array();
      for (double v : res.per_rep[m]) per.push_back(std::isfinite(v) ? json(v) : json(nullptr));
      rows.push_back({{"method", row.method},
                      {"mean_locv", std::isfinite(row.mean_locv) ? json(row.mean_locv) : json(nullptr)},
                      {"sd_locv", std::isfinite(row.sd_locv) ? json(row.sd_locv) : json(nullptr)},
                      {"n_ok", row.n_ok},
                      {"n_failed", row.n_failed},
                      {"per_rep", per}});
    }
    return {{"schema_version", io::schema_version},
            {"scenario", cfg.scenario},
            {"n", cfg.n},
            {"reps", cfg.n_reps},
            {"seed", cfg.rng_seed},
            {"omitted_methods", json::array({"LCM (not implemented)"})},
            {"rows", rows},
            {"failures", res.failures}};
  }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial envelope regression toolkit"};
  app.set_config("--config", "", "flat key-value config file (TOML/INI); flags override it");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  std::uint64_t seed = 1;
  app.add_option("--seed", seed, "random seed")->capture_default_str();
  int verbosity = 0;
  app.add_flag("-v,--verbose", verbosity, "diagnostics on stderr");

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "fit the model to a CSV dataset");
  std::string fit_data, fit_out = "fit_report.json", fit_method_name = "SPENV";
  int fit_u = 0, fit_folds = 5;
  bool fit_select = false, fit_locv = false, fit_no_inference = false;
  SchemaFlags fit_schema;
  OptimizerFlags fit_opt;
  fit_cmd->add_option("--data", fit_data, "dataset CSV")->required();
  fit_cmd->add_option("--out", fit_out, "fit report JSON")->capture_default_str();
  fit_cmd->add_option("--method", fit_method_name, "SPENV | ENV | MLR")->capture_default_str();
  fit_cmd->add_option("--u", fit_u, "envelope dimension");
  fit_cmd->add_flag("--select-u", fit_select, "choose u by cross-validation");
  fit_cmd->add_option("--folds", fit_folds, "folds for --select-u")->capture_default_str();
  fit_cmd->add_flag("--locv", fit_locv, "use fixed-parameter leave-one-out for --select-u");
  fit_cmd->add_flag("--no-inference", fit_no_inference, "skip standard errors");
  fit_schema.add(fit_cmd);
  fit_opt.add(fit_cmd);

  // predict
  auto* pred_cmd = app.add_subcommand("predict", "predict at new sites from a fit report");
  std::string pred_report, pred_sites, pred_out = "predictions.csv", pred_bbox, pred_res;
  std::string pred_coords = "s1,s2";
  pred_cmd->add_option("--report", pred_report, "fit report JSON")->required();
  pred_cmd->add_option("--sites", pred_sites, "CSV of new sites with the fitted covariate columns");
  pred_cmd->add_option("--coords", pred_coords, "coordinate columns of --sites")->capture_default_str();
  pred_cmd->add_option("--grid", pred_bbox, "grid bounding box 'xmin,xmax,ymin,ymax'");
  pred_cmd->add_option("--res", pred_res, "grid resolution 'nx,ny'");
  pred_cmd->add_option("--out", pred_out, "prediction CSV")->capture_default_str();

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "generate a dataset from the simulation design");
  SimConfig sim_cfg;
  std::string sim_sampling = "grid", sim_out = "sim.csv", sim_truth = "sim_truth.json";
  sim_cmd->add_option("--scenario", sim_cfg.scenario, "1 independent, 2/3 Matern")
      ->check(CLI::Range(1, 3))->capture_default_str();
  sim_cmd->add_option("--n", sim_cfg.n, "number of sites")->capture_default_str();
  sim_cmd->add_option("--r", sim_cfg.r, "responses")->capture_default_str();
  sim_cmd->add_option("--p", sim_cfg.p, "covariates")->capture_default_str();
  sim_cmd->add_option("--u", sim_cfg.u, "envelope dimension")->capture_default_str();
  sim_cmd->add_option("--sampling", sim_sampling, "grid | random")
      ->check(CLI::IsMember({"grid", "random"}))->capture_default_str();
  sim_cmd->add_option("--out", sim_out, "dataset CSV")->capture_default_str();
  sim_cmd->add_option("--truth", sim_truth, "ground-truth JSON")->capture_default_str();

  // compare
  auto* cmp_cmd = app.add_subcommand("compare", "LOCV comparison of MLR, ENV and SPENV");
  SimConfig cmp_cfg;
  cmp_cfg.n_reps = 20;
  std::string cmp_sampling = "grid", cmp_prefix = "comparison";
  std::vector<std::string> cmp_methods{"MLR", "ENV", "SPENV"};
  bool cmp_full = false;
  int cmp_threads = 0;
  OptimizerFlags cmp_opt;
  cmp_opt.fixed_smoothness = 0.5;
  cmp_cmd->add_option("--scenario", cmp_cfg.scenario)->check(CLI::Range(1, 3))->capture_default_str();
  cmp_cmd->add_option("--n", cmp_cfg.n)->capture_default_str();
  cmp_cmd->add_option("--r", cmp_cfg.r)->capture_default_str();
  cmp_cmd->add_option("--p", cmp_cfg.p)->capture_default_str();
  cmp_cmd->add_option("--u", cmp_cfg.u)->capture_default_str();
  cmp_cmd->add_option("--reps", cmp_cfg.n_reps)->capture_default_str();
  cmp_cmd->add_option("--sampling", cmp_sampling)
      ->check(CLI::IsMember({"grid", "random"}))->capture_default_str();
  cmp_cmd->add_option("--methods", cmp_methods)->delimiter(',')->capture_default_str();
  cmp_cmd->add_flag("--full-refit", cmp_full, "refit every leave-one-out fold");
  cmp_cmd->add_option("--threads", cmp_threads, "worker threads (0 = SPENV_THREADS or all cores)");
  cmp_cmd->add_option("--out-prefix", cmp_prefix, "writes <prefix>.csv and <prefix>.json")
      ->capture_default_str();
  cmp_opt.add(cmp_cmd);

  // diagnose
  auto* diag_cmd = app.add_subcommand("diagnose", "Moran's I and empirical variogram");
  std::string diag_data, diag_column, diag_prefix = "diagnostics", diag_coords = "s1,s2";
  int diag_bins = 15;
  diag_cmd->add_option("--data", diag_data, "dataset CSV")->required();
  diag_cmd->add_option("--column", diag_column, "column to diagnose")->required();
  diag_cmd->add_option("--coords", diag_coords)->capture_default_str();
  diag_cmd->add_option("--bins", diag_bins)->capture_default_str();
  diag_cmd->add_option("--out-prefix", diag_prefix, "writes <prefix>_moran.json/.csv and <prefix>_variogram.csv")
      ->capture_default_str();

  // variance-study
  auto* var_cmd = app.add_subcommand("variance-study", "sampling sd of beta-hat against n");
  VarianceStudyConfig var_cfg;
  bool var_independent = false;
  std::string var_out = "variance_study.csv";
  int var_threads = 0;
  OptimizerFlags var_opt;
  var_opt.fixed_smoothness = 0.5;
  var_cmd->add_option("--ns", var_cfg.ns)->delimiter(',')->capture_default_str();
  var_cmd->add_option("--reps", var_cfg.n_reps)->capture_default_str();
  var_cmd->add_flag("--independent", var_independent, "independent instead of Matern errors");
  var_cmd->add_option("--threads", var_threads);
  var_cmd->add_option("--out", var_out)->capture_default_str();
  var_opt.add(var_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_schema;
  }

  try {
    if (*fit_cmd) {
      const OptimizerConfig opt = fit_opt.build(seed);
      const Method method = parse_method(fit_method_name);
      const SpatialDataset ds = io::dataset_from_csv(io::read_csv(fit_data), fit_schema.build());
      io::FitReport rep;
      rep.seed = seed;
      Index u = fit_u;
      if (fit_select) {
        FoldScheme fs;
        fs.kind = fit_locv ? FoldScheme::locv : FoldScheme::kfold;
        fs.k = fit_folds;
        fs.seed = seed;
        rep.selection = select_u(ds, method, opt, fs);
        u = rep.selection->u_best;
      }
      if (method == Method::MLR) u = ds.r();
      if (u < 1) throw schema_error("fit: give --u or --select-u");
      rep.fit = fit_method(method, ds, u, opt);
      rep.data = ds;
      if (!fit_no_inference && ds.p() > 0) rep.inference = infer(rep.fit, ds);
      io::atomic_write(fit_out, io::dump(io::report_to_json(rep)));
      if (verbosity > 0)
        for (const auto& t : rep.fit.trace)
          std::cerr << "trace: objective " << std::setprecision(12) << t.objective << " change "
                    << t.change << " range " << t.range << " smoothness " << t.smoothness << "\n";
      print_summary(rep);
      if (!rep.fit.converged) {
        std::cerr << "warning: fit did not converge; report written to " << fit_out << "\n";
        return exit_numerical;
      }
    } else if (*pred_cmd) {
      const io::FitReport rep =
          io::report_from_json(io::json::parse(io::read_file(pred_report), nullptr, true, true));
      GridSpec grid;
      Locations sites;
      Matrix x;
      std::vector<char> failed;
      PredictionResult pr;
      if (!pred_bbox.empty()) {
        const auto b = parse_list(pred_bbox, 4, "--grid");
        const auto rs = parse_list(pred_res.empty() ? "50,50" : pred_res, 2, "--res");
        grid = {b[0], b[1], b[2], b[3], static_cast<int>(rs[0]), static_cast<int>(rs[1])};
        const GridPrediction gp = predict_grid(rep.fit, rep.data, grid);
        sites = gp.nodes;
        pr.mean = gp.mean;
        pr.sd = gp.sd;
        failed = gp.failed;
      } else if (!pred_sites.empty()) {
        const auto t = io::read_csv(pred_sites);
        const auto comma = pred_coords.find(',');
        if (comma == std::string::npos) throw schema_error("--coords expects 'a,b'");
        sites = Locations(io::numeric_columns(
            t, {pred_coords.substr(0, comma), pred_coords.substr(comma + 1)}));
        x = io::numeric_columns(t, rep.data.covariate_names);
        pr = predict(rep.fit, rep.data, sites, x);
      } else {
        throw schema_error("predict: give --sites or --grid");
      }
      io::atomic_write(pred_out, io::predictions_to_csv(sites, pr.mean, pr.sd,
                                                        rep.data.response_names,
                                                        failed.empty() ? nullptr : &failed));
      std::cout << "wrote " << sites.size() * rep.data.r() << " predictions to " << pred_out << "\n";
    } else if (*sim_cmd) {
      sim_cfg.rng_seed = seed;
      sim_cfg.sampling = sim_sampling == "random" ? Sampling::random : Sampling::grid;
      const Simulated s = simulate(sim_cfg);
      io::atomic_write(sim_out, io::dataset_to_csv(s.data));
      io::atomic_write(sim_truth, io::dump(io::truth_to_json(s.truth, sim_cfg)));
      std::cout << "seed " << seed << ": wrote " << sim_out << " and " << sim_truth << "\n";
    } else if (*cmp_cmd) {
      cmp_cfg.rng_seed = seed;
      cmp_cfg.sampling = cmp_sampling == "random" ? Sampling::random : Sampling::grid;
      std::vector<Method> methods;
      for (const auto& m : cmp_methods) methods.push_back(parse_method(m));
      const auto res = compare(cmp_cfg, methods, cmp_opt.build(seed),
                               cmp_full ? LocvPolicy::full_refit : LocvPolicy::fast, cmp_threads);
      io::atomic_write(cmp_prefix + ".csv", comparison_csv(res, cmp_cfg));
      io::atomic_write(cmp_prefix + ".json", io::dump(comparison_json(res, cmp_cfg)));
      std::cout << "method      mean LOCV (sd)\n";
      for (const auto& row : res.rows)
        std::cout << std::left << std::setw(10) << row.method << std::right << "  "
                  << std::setprecision(5) << row.mean_locv << " (" << row.sd_locv << ")"
                  << (row.n_failed ? "  failed reps: " + std::to_string(row.n_failed) : "") << "\n";
      for (const auto& f : res.failures) std::cerr << f << "\n";
    } else if (*diag_cmd) {
      const auto t = io::read_csv(diag_data);
      const auto comma = diag_coords.find(',');
      if (comma == std::string::npos) throw schema_error("--coords expects 'a,b'");
      const Locations loc(io::numeric_columns(
          t, {diag_coords.substr(0, comma), diag_coords.substr(comma + 1)}));
      const Vector v = io::numeric_columns(t, {diag_column}).col(0);
      const MoransI mi = morans_i(v, loc);
      const auto vg = empirical_variogram(v, loc, diag_bins);
      json mj = {{"column", diag_column},
                 {"observed", mi.observed},
                 {"expected", mi.expected},
                 {"sd", mi.sd},
                 {"p_value", mi.p_value}};
      io::atomic_write(diag_prefix + "_moran.json", io::dump(mj));
      std::ostringstream mc;
      mc << "column,observed,expected,sd,p_value\n"
         << diag_column << ',' << io::format_number(mi.observed) << ','
         << io::format_number(mi.expected) << ',' << io::format_number(mi.sd) << ','
         << io::format_number(mi.p_value) << "\n";
      io::atomic_write(diag_prefix + "_moran.csv", mc.str());
      std::ostringstream vc;
      vc << "bin_center,semivariance,pair_count\n";
      for (const auto& b : vg)
        vc << io::format_number(b.center) << ',' << io::format_number(b.semivariance) << ','
           << b.pair_count << "\n";
      io::atomic_write(diag_prefix + "_variogram.csv", vc.str());
      std::cout << "Moran's I " << diag_column << ": observed " << mi.observed << " expected "
                << mi.expected << " sd " << mi.sd << " p " << mi.p_value << "\n";
    } else if (*var_cmd) {
      var_cfg.rng_seed = seed;
      var_cfg.spatial = !var_independent;
      const auto res = asymptotic_variance_study(var_cfg, var_opt.build(seed), var_threads);
      std::ostringstream os;
      os << "n,sd_env,sd_spenv,sd_closed_form,n_failed,tracked_row\n";
      for (const auto& row : res.rows)
        os << row.n << ',' << io::format_number(row.sd_env) << ','
           << io::format_number(row.sd_spenv) << ',' << io::format_number(row.sd_closed_form)
           << ',' << row.n_failed << ',' << res.tracked_row << "\n";
      io::atomic_write(var_out, os.str());
      std::cout << os.str();
    }
  } catch (const schema_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_schema;
  } catch (const spenv::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_schema;
  } catch (const io::json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << "\n";
    return exit_schema;
  } catch (const numerical_error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return exit_numerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_numerical;
  }
  return exit_ok;
}
