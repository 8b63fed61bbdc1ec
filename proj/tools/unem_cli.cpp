// unem: synthesize feature bundles, sample episodes, train and evaluate
// hyperparameter schedules.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "unem/error.hpp"
#include "unem/evaluate.hpp"
#include "unem/kernels/vec.hpp"
#include "unem/storage.hpp"
#include "unem/task_engine.hpp"
#include "unem/unroll.hpp"

namespace {

using namespace unem;

enum Exit { kOk = 0, kConfig = 2, kNumeric = 3, kIo = 4 };

struct Shared {
  std::string model = "gaussian";
  int layers = 10;
  int keff = 5;
  int query = 75;
  int shots = 0;  // 0: 5 for gaussian, 4 for dirichlet
  int ways = 0;   // 0: every class of the split
  std::string imbalance = "uniform";
  double alpha = 2.0;
  std::uint64_t seed = 0;
  std::string bundle;
  std::string schedule;
  std::string out;
  std::string split;
  int tasks = 1000;
  int inner_steps = 1;
};

void add_model_flags(CLI::App* app, Shared& s) {
  app->add_option("--model", s.model, "gaussian | dirichlet")->check(CLI::IsMember({"gaussian", "dirichlet"}));
  app->add_option("--layers", s.layers, "solver layers")->check(CLI::PositiveNumber);
  app->add_option("--inner-steps", s.inner_steps, "Dirichlet fixed-point rounds per layer");
}

void add_protocol_flags(CLI::App* app, Shared& s, bool with_tasks) {
  app->add_option("--keff", s.keff, "classes present in the query set");
  app->add_option("--query", s.query, "query set size");
  app->add_option("--shots", s.shots, "support samples per class");
  app->add_option("--ways", s.ways, "support classes per task (0: whole split)");
  app->add_option("--imbalance", s.imbalance, "uniform | dirichlet")->check(CLI::IsMember({"uniform", "dirichlet"}));
  app->add_option("--alpha", s.alpha, "Dirichlet concentration of query proportions");
  if (with_tasks) app->add_option("--tasks", s.tasks, "number of episodes")->check(CLI::PositiveNumber);
  app->add_option("--seed", s.seed, "random seed");
}

ProtocolConfig protocol(const Shared& s) {
  ProtocolConfig p;
  p.k_total = s.ways;
  p.k_eff = s.keff;
  p.query_size = s.query;
  p.shots = s.shots > 0 ? s.shots : (s.model == "dirichlet" ? 4 : 5);
  p.imbalance = s.imbalance == "dirichlet" ? Imbalance::dirichlet : Imbalance::uniform;
  p.dirichlet_alpha = s.alpha;
  p.validate();
  return p;
}

int split_classes(const FeatureBundle& b, const std::string& tag) {
  const SplitRange* r = b.find_split(tag);
  if (r == nullptr) throw ConfigError("bundle has no split '" + tag + "'");
  std::vector<bool> seen(b.n_classes, false);
  int count = 0;
  for (std::size_t i = r->begin; i < r->end; ++i)
    if (!seen[b.labels[i]]) {
      seen[b.labels[i]] = true;
      ++count;
    }
  return count;
}

HyperSchedule default_schedule(const Shared& s, const FeatureBundle& b, const std::string& split, bool em_preset) {
  const Model m = parse_model(s.model);
  const int k_total = s.ways > 0 ? s.ways : split_classes(b, split);
  InitPreset preset = m == Model::gaussian ? InitPreset::vision : (em_preset ? InitPreset::clip_em : InitPreset::clip);
  return preset_schedule(preset, m, s.layers, s.query, k_total, s.keff);
}

SolverOptions solver_options(const Shared& s) {
  SolverOptions o;
  o.inner_steps = s.inner_steps;
  return o;
}

void emit(const Table& t, const std::string& path) {
  if (path.empty() || path == "-") {
    write_table(std::cout, t);
  } else {
    write_table(path, t);
  }
}

std::string describe(const Shared& s, const std::string& command) {
  std::ostringstream os;
  os << command << ' ' << s.model << ' ' << s.layers << ' ' << s.keff << ' ' << s.query << ' ' << s.shots << ' '
     << s.ways << ' ' << s.imbalance << ' ' << s.alpha << ' ' << s.seed << ' ' << s.tasks << ' ' << s.inner_steps;
  return os.str();
}

// --- commands --------------------------------------------------------------

struct SynthFlags {
  std::string world = "gmm";
  std::size_t classes = 100;
  std::size_t dim = 64;
  double separation = 4.0;
  double noise = 1.0;
  double conc_lo = 2.0;
  double conc_hi = 50.0;
  std::size_t per_class = 100;
  std::size_t base = 64, val = 16, test = 20;
};

int cmd_synth(const Shared& s, const SynthFlags& f) {
  SyntheticWorld w;
  w.kind = f.world == "dirichlet" ? WorldKind::dirichlet_mixture : WorldKind::gmm;
  w.n_classes = f.classes;
  w.dim = f.dim;
  w.separation = f.separation;
  w.noise = f.noise;
  w.concentration_lo = f.conc_lo;
  w.concentration_hi = f.conc_hi;
  w.seed = s.seed;
  if (f.base + f.val + f.test != f.classes) throw ConfigError("split class counts must add up to --classes");
  const FeatureBundle b = make_synthetic_bundle(w, f.per_class, {f.base, f.val, f.test});
  if (s.out.empty()) throw ConfigError("synth needs --out");
  write_bundle(b, s.out);
  std::cout << "wrote " << b.n_samples << " samples x " << b.dim << " to " << s.out << '\n';
  return kOk;
}

int cmd_sample(const Shared& s) {
  const FeatureBundle b = read_bundle(s.bundle);
  const std::string split = s.split.empty() ? "test" : s.split;
  const auto episodes = sample_tasks(b, split, protocol(s), default_feature_mode(parse_model(s.model)),
                                     static_cast<std::size_t>(s.tasks), s.seed);
  Table t{{"task_id", "support", "query", "query_classes", "query_counts"}, {}};
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const Episode& e = episodes[i];
    std::vector<int> counts(e.classes.size(), 0);
    for (int y : e.query_labels) ++counts[static_cast<std::size_t>(y)];
    std::string cls, cnt;
    for (std::size_t k = 0; k < counts.size(); ++k) {
      if (counts[k] == 0) continue;
      cls += (cls.empty() ? "" : " ") + std::to_string(e.classes[k]);
      cnt += (cnt.empty() ? "" : " ") + std::to_string(counts[k]);
    }
    t.add_row({std::to_string(i), std::to_string(e.task.support_idx.size()), std::to_string(e.task.query_idx.size()),
               cls, cnt});
  }
  emit(t, s.out);
  return kOk;
}

struct TrainFlags {
  int epochs = 80;
  std::optional<double> lr;  // 0.1 gaussian, 0.5 dirichlet
  std::optional<int> tasks;  // 1000 gaussian, 100 dirichlet
  int batch = 10;
  bool fixed = false;
  bool no_temperature = false;
  bool em_preset = false;
  std::string report;
};

int cmd_train(const Shared& s, const TrainFlags& f) {
  const FeatureBundle b = read_bundle(s.bundle);
  const ProtocolConfig p = protocol(s);
  HyperSchedule init = default_schedule(s, b, "val", f.em_preset);
  if (f.fixed) init = fixed_variant(init);
  if (f.no_temperature) init = temperature_off_variant(init);
  TrainConfig cfg;
  cfg.epochs = f.epochs;
  const bool clip = init.model == Model::dirichlet;
  cfg.lr0 = f.lr.value_or(clip ? 0.5 : 0.1);
  cfg.batch_tasks = f.batch;
  cfg.tasks_per_split = f.tasks.value_or(clip ? 100 : 1000);
  cfg.seed = s.seed;
  cfg.inner_steps = s.inner_steps;
  const TrainReport r = train(b, p, cfg, init);
  if (s.schedule.empty()) throw ConfigError("train needs --schedule (output path)");
  const std::string hash = config_hash(describe(s, "train") + ' ' + std::to_string(f.epochs) + ' ' +
                                       format_number(cfg.lr0) + ' ' + std::to_string(cfg.tasks_per_split) + ' ' +
                                       std::to_string(f.batch));
  write_schedule({r.final_schedule, {s.seed, hash, f.epochs}}, s.schedule);
  if (!f.report.empty()) write_table(f.report, train_table(r));
  emit(schedule_table(r.final_schedule), s.out);
  return kOk;
}

struct EvalFlags {
  std::optional<double> lambda;
  std::optional<double> temperature;
};

HyperSchedule eval_schedule(const Shared& s, const FeatureBundle& b, const std::string& split, const EvalFlags& f) {
  if (!s.schedule.empty()) return read_schedule(s.schedule).schedule;
  HyperSchedule d = default_schedule(s, b, split, false);
  const double lambda = f.lambda.value_or(d.lambda(0));
  const double t = f.temperature.value_or(1.0);
  HyperSchedule out = make_schedule(d.model, d.layers, lambda, t, 1.0, false, t != 1.0);
  return out;
}

int cmd_eval(const Shared& s, const EvalFlags& f) {
  const FeatureBundle b = read_bundle(s.bundle);
  const std::string split = s.split.empty() ? "test" : s.split;
  const HyperSchedule sched = eval_schedule(s, b, split, f);
  const auto episodes =
      sample_tasks(b, split, protocol(s), sched.feature_mode, static_cast<std::size_t>(s.tasks), s.seed);
  const EvalResult r = evaluate(episodes, sched, solver_options(s));
  emit(eval_table(r.report.task_accuracy, r.loss), s.out);
  std::fprintf(stderr, "accuracy %.4f +- %.4f over %zu tasks\n", r.report.mean, 1.96 * r.report.stderr_mean,
               episodes.size());
  return kOk;
}

struct GridFlags {
  std::vector<double> lambdas;
  std::vector<double> temperatures{1.0};
};

int cmd_gridsearch(const Shared& s, const GridFlags& f) {
  const FeatureBundle b = read_bundle(s.bundle);
  const std::string split = s.split.empty() ? "val" : s.split;
  const HyperSchedule base = default_schedule(s, b, split, false);
  std::vector<double> lambdas = f.lambdas;
  if (lambdas.empty()) {
    lambdas = log_grid(1.0, 1e4, 25);
    lambdas.push_back(static_cast<double>(s.query));
    std::sort(lambdas.begin(), lambdas.end());
  }
  const auto episodes =
      sample_tasks(b, split, protocol(s), base.feature_mode, static_cast<std::size_t>(s.tasks), s.seed);
  const GridResult g = grid_search(episodes, base, lambdas, f.temperatures, solver_options(s));
  Table t{{"lambda", "T", "accuracy", "stderr", "best"}, {}};
  for (std::size_t i = 0; i < g.cells.size(); ++i) {
    const GridCell& c = g.cells[i];
    t.add_row({format_number(c.lambda), format_number(c.temperature), format_number(c.accuracy),
               format_number(c.stderr_mean), i == g.best ? "1" : "0"});
  }
  emit(t, s.out);
  const GridCell& best = g.cells[g.best];
  std::fprintf(stderr, "best lambda %.6g T %.6g accuracy %.4f\n", best.lambda, best.temperature, best.accuracy);
  return kOk;
}

int cmd_compare(const Shared& s) {
  const FeatureBundle b = read_bundle(s.bundle);
  const std::string split = s.split.empty() ? "test" : s.split;
  if (s.schedule.empty()) throw ConfigError("compare needs --schedule");
  const HyperSchedule learned = read_schedule(s.schedule).schedule;
  const AblationSet abl = ablation_modes(learned);
  const HyperSchedule defaults = temperature_off_variant(fixed_variant(default_schedule(s, b, split, false)));

  const auto episodes =
      sample_tasks(b, split, protocol(s), learned.feature_mode, static_cast<std::size_t>(s.tasks), s.seed);
  const std::vector<std::pair<std::string, const HyperSchedule*>> rows = {
      {"adaptive_temperature", &abl.adaptive},
      {"fixed_temperature", &abl.fixed},
      {"adaptive_no_temperature", &abl.temperature_off},
      {"fixed_no_temperature", &abl.fixed_temperature_off},
      {"iterative_defaults", &defaults},
  };
  Table t{{"variant", "adaptive", "temperature", "seed", "tasks", "accuracy", "stderr"}, {}};
  for (const auto& [name, sched] : rows) {
    const EvalResult r = evaluate(episodes, *sched, solver_options(s));
    t.add_row({name, sched->adaptive ? "1" : "0", sched->temperature ? "1" : "0", std::to_string(s.seed),
               std::to_string(episodes.size()), format_number(r.report.mean), format_number(r.report.stderr_mean)});
  }
  emit(t, s.out);
  return kOk;
}

int cmd_inspect(const Shared& s) {
  if (!s.schedule.empty()) {
    const ScheduleFile f = read_schedule(s.schedule);
    std::cout << "model " << model_name(f.schedule.model) << ", L = " << f.schedule.layers
              << ", adaptive = " << f.schedule.adaptive << ", temperature = " << f.schedule.temperature
              << ", trainable = " << f.schedule.trainable_count() << ", t_z = " << format_number(f.schedule.t_z())
              << "\nseed " << f.provenance.seed << ", config " << f.provenance.config_hash << ", epochs "
              << f.provenance.epochs << '\n';
    write_table(std::cout, schedule_table(f.schedule));
  }
  if (!s.bundle.empty()) {
    const FeatureBundle b = read_bundle(s.bundle);
    std::cout << b.n_samples << " samples, dim " << b.dim << ", " << b.n_classes << " classes, "
              << (b.kind == FeatureKind::simplex ? "simplex" : "raw") << " features\n";
    Table t{{"split", "begin", "end", "classes"}, {}};
    for (const auto& r : b.splits)
      t.add_row({r.tag, std::to_string(r.begin), std::to_string(r.end), std::to_string(split_classes(b, r.tag))});
    write_table(std::cout, t);
  }
  if (s.schedule.empty() && s.bundle.empty()) throw ConfigError("inspect needs --bundle or --schedule");
  std::cout << "simd " << kernels::isa_name(kernels::active_ops().isa) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transductive few-shot inference with learned EM hyperparameters"};
  app.require_subcommand(1);
  Shared s;
  SynthFlags synth;
  TrainFlags trainf;
  EvalFlags evalf;
  GridFlags grid;

  auto* c_synth = app.add_subcommand("synth", "write a synthetic feature bundle");
  c_synth->add_option("--world", synth.world, "gmm | dirichlet")->check(CLI::IsMember({"gmm", "dirichlet"}));
  c_synth->add_option("--classes", synth.classes);
  c_synth->add_option("--dim", synth.dim);
  c_synth->add_option("--separation", synth.separation);
  c_synth->add_option("--noise", synth.noise);
  c_synth->add_option("--conc-lo", synth.conc_lo);
  c_synth->add_option("--conc-hi", synth.conc_hi);
  c_synth->add_option("--per-class", synth.per_class);
  c_synth->add_option("--base-classes", synth.base);
  c_synth->add_option("--val-classes", synth.val);
  c_synth->add_option("--test-classes", synth.test);
  c_synth->add_option("--seed", s.seed);
  c_synth->add_option("--out", s.out)->required();

  auto* c_sample = app.add_subcommand("sample", "list sampled episodes");
  auto* c_train = app.add_subcommand("train", "learn a hyperparameter schedule on the val split");
  auto* c_eval = app.add_subcommand("eval", "evaluate a schedule on sampled episodes");
  auto* c_grid = app.add_subcommand("gridsearch", "accuracy over a fixed (lambda, T) grid");
  auto* c_compare = app.add_subcommand("compare", "fixed/adaptive x temperature on/off ablation");
  auto* c_inspect = app.add_subcommand("inspect", "summarise a bundle or schedule");

  for (auto* c : {c_sample, c_train, c_eval, c_grid, c_compare}) {
    add_model_flags(c, s);
    add_protocol_flags(c, s, c != c_train);
    c->add_option("--bundle", s.bundle)->required();
    c->add_option("--out", s.out, "report path ('-' or empty: stdout)");
  }
  for (auto* c : {c_sample, c_eval, c_grid, c_compare}) c->add_option("--split", s.split);
  for (auto* c : {c_eval, c_compare, c_train}) c->add_option("--schedule", s.schedule);
  c_inspect->add_option("--bundle", s.bundle);
  c_inspect->add_option("--schedule", s.schedule);

  c_train->add_option("--epochs", trainf.epochs)->check(CLI::NonNegativeNumber);
  c_train->add_option("--lr", trainf.lr, "initial learning rate (default 0.1 gaussian, 0.5 dirichlet)");
  c_train->add_option("--tasks", trainf.tasks, "validation episodes (default 1000 gaussian, 100 dirichlet)")
      ->check(CLI::PositiveNumber);
  c_train->add_option("--batch", trainf.batch)->check(CLI::PositiveNumber);
  c_train->add_flag("--fixed", trainf.fixed, "one (lambda, T) shared by all layers");
  c_train->add_flag("--no-temperature", trainf.no_temperature, "pin T to 1");
  c_train->add_flag("--em-preset", trainf.em_preset, "dirichlet init lambda = (K / K_eff) |Q|");
  c_train->add_option("--report", trainf.report, "per-epoch loss table");

  c_eval->add_option("--lambda", evalf.lambda, "constant lambda when no schedule is given");
  c_eval->add_option("--temperature", evalf.temperature, "constant T when no schedule is given");

  c_grid->add_option("--lambdas", grid.lambdas, "lambda grid (default: 25 log-spaced points in [1, 1e4] plus |Q|)");
  c_grid->add_option("--temperatures", grid.temperatures, "T grid");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*c_synth) return cmd_synth(s, synth);
    if (*c_sample) return cmd_sample(s);
    if (*c_train) return cmd_train(s, trainf);
    if (*c_eval) return cmd_eval(s, evalf);
    if (*c_grid) return cmd_gridsearch(s, grid);
    if (*c_compare) return cmd_compare(s);
    if (*c_inspect) return cmd_inspect(s);
  } catch (const StorageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const ConvergenceError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const DegenerateClassError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const DomainError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  }
  return kConfig;
}
