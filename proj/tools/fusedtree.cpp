#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fusedtree/fusedtree.hpp"

namespace ft = fusedtree;

namespace {

std::string config_scalar(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) return ft::detail::fmt(v.get<double>());
  throw ft::UsageError("config values must be strings, numbers, booleans or arrays of them");
}

// Fills options of `sub` not given on the command line from a flat JSON object whose keys
// are long option names without the leading dashes.
void apply_config(CLI::App* sub, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ft::UsageError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ft::UsageError(std::string("config file is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ft::UsageError("config file must hold a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    CLI::Option* opt = sub->get_option_no_throw("--" + it.key());
    if (!opt || it.key() == "config") throw ft::UsageError("unknown config key '" + it.key() + "'");
    if (opt->count() > 0) continue;
    if (it->is_array()) {
      std::vector<std::string> values;
      for (const auto& v : *it) values.push_back(config_scalar(v));
      opt->add_result(values);
    } else {
      opt->add_result(config_scalar(*it));
    }
    try {
      opt->run_callback();
    } catch (const CLI::ParseError& e) {
      throw ft::UsageError("config key '" + it.key() + "': " + e.what());
    }
  }
}

std::ostream* open_out(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return &std::cout;
  file.open(path, std::ios::binary);
  if (!file) throw ft::UsageError("cannot write '" + path + "'");
  return &file;
}

char parse_delimiter(const std::string& d) {
  if (d == "tab" || d == "\\t") return '\t';
  if (d.size() == 1) return d[0];
  throw ft::UsageError("delimiter must be a single character or 'tab'");
}

struct Common {
  std::string config;
  std::uint64_t seed = 1;
  int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::string delimiter = ",";
};

struct DataArgs {
  std::string data;
  std::string omics_file;
  std::string family = "gaussian";
  std::string response;
  std::string time;
  std::string status;
  std::vector<std::string> clinical;
  std::vector<std::string> kinds;
  std::vector<std::string> omics;
};

struct ModelArgs {
  std::string variant = "fusedtree";
  std::optional<double> lambda;
  std::optional<double> alpha;
  int folds = 5;
  ft::Index min_node_size = 30;
  int max_depth = 6;
  int tree_folds = 5;
  int restarts = 3;
  bool no_linear = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config file (keys are long option names; flags win)");
  sub->add_option("--seed", c.seed, "Master seed for every random stream");
  sub->add_option("--threads", c.threads, "Worker threads (default: available cores)")->check(CLI::PositiveNumber);
  sub->add_option("--delimiter", c.delimiter, "Field delimiter: one character or 'tab'");
}

void add_data(CLI::App* sub, DataArgs& d, bool need_data = true) {
  auto* o = sub->add_option("--data", d.data, "Delimited input file with a header row");
  if (need_data) o->required();
  sub->add_option("--omics-file", d.omics_file, "Separate omics file (rows matched by position)");
  sub->add_option("--family", d.family, "gaussian, binomial or cox");
  sub->add_option("--response", d.response, "Response column (gaussian, binomial)");
  sub->add_option("--time", d.time, "Survival time column (cox)");
  sub->add_option("--status", d.status, "Event indicator column (cox)");
  sub->add_option("--clinical", d.clinical, "Clinical columns")->delimiter(',');
  sub->add_option("--kinds", d.kinds, "Kind per clinical column: continuous, ordinal, categorical")->delimiter(',');
  sub->add_option("--omics", d.omics, "Omics columns (default: all remaining columns)")->delimiter(',');
}

void add_model(CLI::App* sub, ModelArgs& m) {
  sub->add_option("--variant", m.variant, "fusedtree, zerofus, fulfus or ridge");
  sub->add_option("--lambda", m.lambda, "Fixed ridge penalty (skips tuning)");
  sub->add_option("--alpha", m.alpha, "Fixed fusion penalty");
  sub->add_option("--folds", m.folds, "Cross-validation folds for tuning");
  sub->add_option("--min-node-size", m.min_node_size, "Minimum rows per tree node");
  sub->add_option("--max-depth", m.max_depth, "Maximum tree depth");
  sub->add_option("--tree-folds", m.tree_folds, "Cross-validation folds for pruning");
  sub->add_option("--restarts", m.restarts, "Extra Nelder-Mead starts");
  sub->add_flag("--no-linear", m.no_linear, "Do not add continuous clinical columns as linear terms");
}

ft::DataSpec make_spec(const DataArgs& d, const Common& c) {
  ft::DataSpec s;
  s.family = ft::family_from_string(d.family);
  s.response = d.response;
  s.time = d.time;
  s.status = d.status;
  if (s.family == ft::Family::cox) {
    if (d.time.empty() || d.status.empty()) throw ft::UsageError("survival data needs --time and --status");
  } else if (d.response.empty()) {
    throw ft::UsageError("--response is required");
  }
  s.clinical = d.clinical;
  for (const auto& k : d.kinds) s.kinds.push_back(ft::column_kind_from_string(k));
  s.omics = d.omics;
  if (!d.omics_file.empty()) s.omics_path = d.omics_file;
  s.delimiter = parse_delimiter(c.delimiter);
  return s;
}

ft::FitOptions make_fit_options(const ModelArgs& m, const Common& c) {
  ft::FitOptions o;
  o.variant = ft::variant_from_string(m.variant);
  if (o.variant == ft::Variant::oracle) throw ft::UsageError("the oracle variant needs the true tree (simulation only)");
  o.lambda = m.lambda;
  o.alpha = m.alpha;
  o.folds = m.folds;
  o.seed = c.seed;
  o.tree.min_node_size = m.min_node_size;
  o.tree.max_depth = m.max_depth;
  o.tree.cv_folds = m.tree_folds;
  o.tune.restarts = m.restarts;
  o.linear_clinical = !m.no_linear;
  o.tree.validate();
  return o;
}

std::vector<std::string> response_names(const ft::DataSpec& s) { return s.response_columns(); }

void write_fit_report(std::ostream& os, const ft::FitResult& res) {
  const auto& m = res.model;
  os << "family: " << ft::to_string(m.family) << '\n'
     << "variant: " << ft::to_string(m.variant) << '\n'
     << "leaves: " << m.n_leaves() << '\n'
     << "omics covariates: " << m.n_omics() << '\n'
     << "lambda: " << ft::detail::fmt(m.lambda) << '\n'
     << "alpha: " << ft::detail::fmt(m.alpha) << '\n'
     << "cv objective: " << ft::detail::fmt(res.report.cv_objective) << '\n'
     << "training loss: " << ft::detail::fmt(res.report.train_loss) << '\n'
     << "leaf sizes:";
  for (auto n : res.report.leaf_sizes) os << ' ' << n;
  os << "\ntree:\n" << m.tree.render(m.clinical_names);
}

ft::Dataset load_for_model(const ft::FusedTreeModel& model, const std::string& path, const std::string& omics_file,
                           const Common& c, bool with_response) {
  const auto spec = ft::spec_for_model(model, parse_delimiter(c.delimiter),
                                       omics_file.empty() ? std::nullopt : std::optional<std::string>(omics_file));
  if (with_response && model.response_names.empty()) throw ft::UsageError("model file does not name its response columns");
  return ft::load_dataset(spec, path, with_response);
}

int run(int argc, char** argv) {
  CLI::App app{"Clinical regression tree with fused per-leaf omics ridge regressions"};
  app.require_subcommand(1);

  Common common;
  DataArgs data;
  ModelArgs margs;

  // fit
  std::string model_out, report_out;
  auto* fit = app.add_subcommand("fit", "Fit a model and write the model file");
  add_common(fit, common);
  add_data(fit, data);
  add_model(fit, margs);
  fit->add_option("--model", model_out, "Output model file")->required();
  fit->add_option("--report", report_out, "Fit report (default: stdout)");

  // tune
  std::string trace_out;
  auto* tune = app.add_subcommand("tune", "Tune the penalties by cross-validation and emit the optimizer trace");
  add_common(tune, common);
  add_data(tune, data);
  add_model(tune, margs);
  tune->add_option("--trace", trace_out, "Optimizer trace CSV (default: stdout)");
  tune->add_option("--model", model_out, "Also write the tuned model file");

  // predict
  std::string model_in, pred_out, type = "response";
  std::optional<double> horizon;
  auto* predict = app.add_subcommand("predict", "Predict new data with a fitted model");
  add_common(predict, common);
  predict->add_option("--model", model_in, "Model file")->required();
  predict->add_option("--data", data.data, "Input file")->required();
  predict->add_option("--omics-file", data.omics_file, "Separate omics file");
  predict->add_option("--type", type, "link, response, cumhaz or survival");
  predict->add_option("--horizon", horizon, "Time for cumhaz / survival (default: last training event time)");
  predict->add_option("--out", pred_out, "Output CSV (default: stdout)");

  // nodetest
  std::string test_in, test_omics, selected_out;
  int permutations = 1999;
  double tolerance = 0.02;
  auto* nodetest = app.add_subcommand("nodetest", "Per-leaf omics tests and the backward removal path");
  add_common(nodetest, common);
  nodetest->add_option("--model", model_in, "Model file")->required();
  nodetest->add_option("--train", data.data, "Training data")->required();
  nodetest->add_option("--train-omics-file", data.omics_file, "Separate training omics file");
  nodetest->add_option("--test", test_in, "Test data")->required();
  nodetest->add_option("--test-omics-file", test_omics, "Separate test omics file");
  nodetest->add_option("--permutations", permutations, "Permutations per leaf")->check(CLI::PositiveNumber);
  nodetest->add_option("--tolerance", tolerance, "Relative performance tolerance for the selection");
  nodetest->add_option("--report", report_out, "Path table (default: stdout)");
  nodetest->add_option("--selected-model", selected_out, "Write the selected model file");

  // paths
  std::vector<double> alphas;
  std::optional<double> path_lambda;
  std::string paths_out;
  auto* paths = app.add_subcommand("paths", "Coefficient paths over the fusion penalty at fixed lambda");
  add_common(paths, common);
  paths->add_option("--model", model_in, "Model file")->required();
  paths->add_option("--data", data.data, "Training data")->required();
  paths->add_option("--omics-file", data.omics_file, "Separate omics file");
  paths->add_option("--alphas", alphas, "Fusion penalties (default: 0 and 9 log-spaced values)")->delimiter(',');
  paths->add_option("--lambda", path_lambda, "Ridge penalty (default: the model's)");
  paths->add_option("--out", paths_out, "Output CSV (default: stdout)");

  // simulate
  std::string experiment = "interaction", covariance = "ar1", sim_out, summary_out;
  ft::SimConfig sim;
  std::vector<std::string> sim_models;
  std::optional<double> laplace_scale;
  auto* simulate = app.add_subcommand("simulate", "Run a simulation experiment");
  add_common(simulate, common);
  simulate->add_option("--experiment", experiment, "interaction, full_fusion, linear or regpath");
  simulate->add_option("--n", sim.n, "Training size");
  simulate->add_option("--p", sim.p, "Omics covariates");
  simulate->add_option("--n-test", sim.n_test, "Test size");
  simulate->add_option("--reps", sim.replications, "Replications");
  simulate->add_option("--noise-sd", sim.noise_sd, "Noise standard deviation");
  simulate->add_option("--laplace-scale", laplace_scale, "Scale of the Laplace omics effects");
  simulate->add_option("--covariance", covariance, "identity, ar1 or block");
  simulate->add_option("--rho", sim.covariance.rho, "Correlation parameter");
  simulate->add_option("--block-size", sim.covariance.block_size, "Block size for block covariance");
  simulate->add_option("--models", sim_models, "Model variants (default: the experiment's set)")->delimiter(',');
  simulate->add_option("--folds", sim.folds, "Tuning folds");
  simulate->add_option("--min-node-size", sim.tree.min_node_size, "Minimum rows per tree node");
  simulate->add_option("--out", sim_out, "Per-replication table (default: stdout)");
  simulate->add_option("--summary", summary_out, "Summary table (default: after the results on stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ft::ErrorCode::usage);
  }
  if (!common.config.empty())
    for (CLI::App* sub : app.get_subcommands()) apply_config(sub, common.config);

  if (*fit || *tune) {
    const auto spec = make_spec(data, common);
    const ft::Dataset d = ft::load_dataset(spec, data.data);
    const ft::FitOptions opt = make_fit_options(margs, common);
    ft::FitResult res = ft::fit_model(d, opt);
    res.model.response_names = response_names(spec);
    if (*fit) {
      ft::save_model(res.model, model_out);
      std::ofstream f;
      write_fit_report(*open_out(report_out, f), res);
      return 0;
    }
    if (!model_out.empty()) ft::save_model(res.model, model_out);
    std::ofstream f;
    std::ostream& os = *open_out(trace_out, f);
    os << "start,iteration,log_lambda,log_alpha,objective\n";
    if (res.report.tuning) {
      const auto& tr = *res.report.tuning;
      for (std::size_t s = 0; s < tr.runs.size(); ++s) {
        const auto& run = tr.runs[s];
        for (std::size_t it = 0; it < run.simplex_history.size(); ++it) {
          const auto& simplex = run.simplex_history[it];
          const ft::Vector& best = simplex.front();
          os << s << ',' << it << ',' << ft::detail::fmt(best[0]) << ','
             << (best.size() > 1 ? ft::detail::fmt(best[1]) : ft::detail::fmt(std::log(res.model.alpha))) << ','
             << ft::detail::fmt(it < run.best_history.size() ? run.best_history[it] : run.value) << '\n';
        }
      }
    }
    std::cerr << "lambda: " << ft::detail::fmt(res.model.lambda) << "\nalpha: " << ft::detail::fmt(res.model.alpha)
              << "\ncv objective: " << ft::detail::fmt(res.report.cv_objective) << '\n';
    return 0;
  }

  if (*predict) {
    const ft::FusedTreeModel model = ft::load_model(model_in);
    const ft::Dataset d = load_for_model(model, data.data, data.omics_file, common, false);
    const ft::PredictType pt = ft::predict_type_from_string(type);
    const ft::Vector pred = d.size() ? model.predict(d.Z, d.X, pt, horizon) : ft::Vector();
    const auto leaves = d.size() ? model.tree.assign(d.Z) : std::vector<ft::Index>{};
    std::ofstream f;
    std::ostream& os = *open_out(pred_out, f);
    os << "row,leaf,prediction\n";
    for (ft::Index i = 0; i < pred.size(); ++i)
      os << i << ',' << leaves[static_cast<std::size_t>(i)] << ',' << ft::detail::fmt(pred[i]) << '\n';
    return 0;
  }

  if (*nodetest) {
    const ft::FusedTreeModel model = ft::load_model(model_in);
    const ft::Dataset train = load_for_model(model, data.data, data.omics_file, common, true);
    const ft::Dataset test = load_for_model(model, test_in, test_omics, common, true);
    ft::RemovalOptions ro;
    ro.permutations = permutations;
    ro.seed = common.seed;
    ro.tolerance = tolerance;
    ro.threads = common.threads;
    ro.fit.folds = model.folds;
    const ft::RemovalPath path = ft::removal_path(model, train, test, ro);
    std::ofstream f;
    std::ostream& os = *open_out(report_out, f);
    os << "step,leaf,p_value,removed,metric,performance,selected\n";
    for (std::size_t k = 0; k < path.steps.size(); ++k) {
      const auto& s = path.steps[k];
      std::string removed;
      for (std::size_t i = 0; i < s.removed.size(); ++i) removed += (i ? " " : "") + std::to_string(s.removed[i]);
      os << k << ',';
      if (k == 0) {
        os << "NA,NA,";
      } else {
        const ft::Index leaf = s.removed.back();
        os << leaf << ',' << ft::detail::fmt(path.tests[static_cast<std::size_t>(leaf)].p_value) << ',';
      }
      os << ft::detail::csv_field(removed) << ',' << ft::to_string(s.performance.kind) << ','
         << ft::detail::fmt(s.performance.value) << ',' << (k == path.selected ? 1 : 0) << '\n';
    }
    if (!selected_out.empty()) ft::save_model(path.steps[path.selected].model, selected_out);
    return 0;
  }

  if (*paths) {
    const ft::FusedTreeModel model = ft::load_model(model_in);
    const ft::Dataset d = load_for_model(model, data.data, data.omics_file, common, true);
    const double lambda = path_lambda.value_or(model.lambda);
    if (alphas.empty()) alphas = ft::default_alpha_grid(lambda, d.size(), model.n_slots());
    const auto pts = ft::regularization_path(model, d, lambda, alphas);
    const ft::Index M = model.n_leaves(), S = model.n_slots(), p = model.n_omics();
    const auto slot = model.slot_of_leaf();
    std::ofstream f;
    std::ostream& os = *open_out(paths_out, f);
    os << "alpha,covariate";
    for (ft::Index m = 0; m < M; ++m) os << ",leaf" << m;
    os << '\n';
    for (const auto& pt : pts) {
      os << ft::detail::fmt(pt.alpha) << ",(intercept)";
      for (ft::Index m = 0; m < M; ++m) os << ',' << ft::detail::fmt(pt.c[m]);
      os << '\n';
      for (ft::Index j = 0; j < p; ++j) {
        const std::string name = model.omics_names.empty()
                                     ? std::to_string(j)
                                     : model.omics_names[static_cast<std::size_t>(model.omics.kept[static_cast<std::size_t>(j)])];
        os << ft::detail::fmt(pt.alpha) << ',' << ft::detail::csv_field(name);
        for (ft::Index m = 0; m < M; ++m) {
          const ft::Index s = slot[static_cast<std::size_t>(m)];
          os << ',' << (s < 0 ? std::string("NA") : ft::detail::fmt(pt.beta[j * S + s]));
        }
        os << '\n';
      }
    }
    return 0;
  }

  if (*simulate) {
    sim.experiment = ft::experiment_from_string(experiment);
    sim.covariance.kind = ft::covariance_from_string(covariance);
    sim.laplace_scale = laplace_scale;
    sim.seed = common.seed;
    sim.threads = common.threads;
    for (const auto& m : sim_models) sim.models.push_back(ft::variant_from_string(m));
    if (sim.experiment == ft::Experiment::regpath && simulate->count("--p") == 0) sim.p = 10;
    const ft::SimResults res = ft::run_experiment(sim);
    std::ofstream f;
    std::ostream& os = *open_out(sim_out, f);
    os << ft::results_table(res);
    if (summary_out.empty()) {
      std::ostream& ss = sim_out.empty() ? std::cout : std::cerr;
      ss << '\n' << ft::summary_table(res);
    } else {
      std::ofstream g;
      *open_out(summary_out, g) << ft::summary_table(res);
    }
    return 0;
  }
  return static_cast<int>(ft::ErrorCode::usage);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ft::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ft::ErrorCode::numerical);
  }
}
