#include "scabi/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

namespace scabi::pipeline {

namespace fs = std::filesystem;
using training::Variant;

namespace {

std::string reference_name(ReferenceKind k) {
  switch (k) {
    case ReferenceKind::kNone: return "none";
    case ReferenceKind::kExact: return "exact";
    case ReferenceKind::kGrid: return "grid";
    case ReferenceKind::kRejection: return "rejection";
    case ReferenceKind::kMetropolis: return "metropolis";
  }
  return "none";
}

ReferenceKind reference_from_string(const std::string& s) {
  if (s == "none") return ReferenceKind::kNone;
  if (s == "exact") return ReferenceKind::kExact;
  if (s == "grid") return ReferenceKind::kGrid;
  if (s == "rejection") return ReferenceKind::kRejection;
  if (s == "metropolis") return ReferenceKind::kMetropolis;
  throw ConfigError("evaluation.reference must be none, exact, grid, rejection or metropolis");
}

std::string fnv_hex(const std::string& text) {
  Fnv1a h;
  h.update(text);
  return hex64(h.digest());
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  return nlohmann::json::parse(in);
}

std::string hash_line(const std::string& hash) { return "# config_hash: " + hash + "\n"; }

void note(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

training::TrainConfig run_config(const ExperimentConfig& c, Variant v) {
  training::TrainConfig t = c.training;
  t.variant = v;
  t.self_consistency.source = c.sc_source.value_or(training::learns_likelihood(v) ? objectives::LikelihoodSource::kLearned
                                                                                   : objectives::LikelihoodSource::kExplicit);
  t.validate();
  return t;
}

Index validation_size(const ExperimentConfig& c) {
  return static_cast<Index>(std::ceil(c.training.validation_fraction * c.simulation_budget));
}

// Identifies the simulated data: task constants, sizes and simulation seed.
std::string data_hash(const ExperimentConfig& c, std::uint64_t seed) {
  const nlohmann::json j{{"task", c.resolved().at("task")},
                         {"simulation_budget", c.simulation_budget},
                         {"validation", validation_size(c)},
                         {"simulation_seed", c.simulation_seed(seed)}};
  return fnv_hex(j.dump());
}

bool stored_set_matches(const fs::path& path, const std::string& hash) {
  if (!fs::exists(path)) return false;
  try {
    return training::read_training_set_header(path).value("data_hash", std::string()) == hash;
  } catch (const CheckpointError&) {
    return false;
  }
}

// Reuses stored sets when they were simulated for the same data; otherwise
// simulates (deterministically) and overwrites them.
std::pair<training::TrainingSet, training::TrainingSet> load_or_simulate(const ExperimentConfig& c,
                                                                         const simulators::Task& task,
                                                                         const Layout& layout, std::uint64_t seed) {
  const std::string dh = data_hash(c, seed);
  if (!stored_set_matches(layout.training_set(seed), dh) || !stored_set_matches(layout.validation_set(seed), dh)) {
    const std::uint64_t sim = c.simulation_seed(seed);
    const nlohmann::json meta{{"config_hash", c.hash()}, {"data_hash", dh}, {"simulation_seed", sim}};
    const auto tr = training::generate_training_set(task, c.simulation_budget, sim, SeedDomain::kTrainingSet);
    training::save_training_set(tr, layout.training_set(seed), meta);
    training::TrainingSet va;
    if (validation_size(c) > 0) va = training::generate_training_set(task, validation_size(c), sim, SeedDomain::kValidationSet);
    training::save_training_set(va, layout.validation_set(seed), meta);
  }
  return {training::load_training_set(layout.training_set(seed)), training::load_training_set(layout.validation_set(seed))};
}

}  // namespace

void to_json(nlohmann::json& j, const EvaluationSpec& s) {
  j = nlohmann::json{{"test_instances", s.test_instances},   {"posterior_samples", s.posterior_samples},
                     {"reference", reference_name(s.reference)}, {"grid_resolution", s.grid_resolution},
                     {"lml_draws", s.lml_draws},             {"lml_level", s.lml_level},
                     {"sbc_rows", s.sbc_rows},               {"sbc_draws", s.sbc_draws},
                     {"ecdf_alpha", s.ecdf_alpha},           {"sample_instances", s.sample_instances},
                     {"metropolis", {{"burn_in", s.metropolis.burn_in}, {"thin", s.metropolis.thin},
                                     {"pilot", s.metropolis.pilot}, {"target_acceptance", s.metropolis.target_acceptance}}}};
}

void from_json(const nlohmann::json& j, EvaluationSpec& s) {
  s = EvaluationSpec{};
  s.test_instances = j.value("test_instances", s.test_instances);
  s.posterior_samples = j.value("posterior_samples", s.posterior_samples);
  s.reference = reference_from_string(j.value("reference", std::string("none")));
  s.grid_resolution = j.value("grid_resolution", s.grid_resolution);
  s.lml_draws = j.value("lml_draws", s.lml_draws);
  s.lml_level = j.value("lml_level", s.lml_level);
  s.sbc_rows = j.value("sbc_rows", s.sbc_rows);
  s.sbc_draws = j.value("sbc_draws", s.sbc_draws);
  s.ecdf_alpha = j.value("ecdf_alpha", s.ecdf_alpha);
  s.sample_instances = j.value("sample_instances", s.sample_instances);
  if (j.contains("metropolis")) {
    const auto& m = j.at("metropolis");
    s.metropolis.burn_in = m.value("burn_in", s.metropolis.burn_in);
    s.metropolis.thin = m.value("thin", s.metropolis.thin);
    s.metropolis.pilot = m.value("pilot", s.metropolis.pilot);
    s.metropolis.target_acceptance = m.value("target_acceptance", s.metropolis.target_acceptance);
  }
  require(s.test_instances >= 1 && s.posterior_samples >= 2, "evaluation: need test instances and samples");
  require(s.lml_draws >= 0 && s.sbc_rows >= 0 && s.sbc_draws >= 1 && s.sample_instances >= 0,
          "evaluation: counts must be non-negative");
}

void ExperimentConfig::validate() const {
  require(simulation_budget >= 1, "config: simulation_budget must be >= 1");
  require(!seeds.empty(), "config: need at least one seed");
  const std::set<std::uint64_t> distinct(seeds.begin(), seeds.end());
  require(distinct.size() == seeds.size(), "config: seeds must be distinct");
  // Seeds of different roles (data, training, evaluation) must not coincide.
  if (data_seed) require(distinct.count(*data_seed) == 0, "config: data_seed must differ from the training seeds");
  if (eval_seed) {
    require(distinct.count(*eval_seed) == 0, "config: eval_seed must differ from the training seeds");
    require(!data_seed || *data_seed != *eval_seed, "config: eval_seed must differ from data_seed");
  }
  require(!variants.empty(), "config: need at least one variant");
  training.validate();
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  nlohmann::json variants = nlohmann::json::array();
  for (auto v : c.variants) variants.push_back(training::to_string(v));
  nlohmann::json t = c.training;
  t.erase("variant");
  if (c.sc_source) {
    t["self_consistency"]["likelihood"] = *c.sc_source == objectives::LikelihoodSource::kLearned ? "learned" : "explicit";
  } else {
    t["self_consistency"].erase("likelihood");
  }
  j = nlohmann::json{{"name", c.name},
                     {"task", c.task},
                     {"simulation_budget", c.simulation_budget},
                     {"seeds", c.seeds},
                     {"data_seed", c.data_seed ? nlohmann::json(*c.data_seed) : nlohmann::json(nullptr)},
                     {"eval_seed", c.eval_seed ? nlohmann::json(*c.eval_seed) : nlohmann::json(nullptr)},
                     {"variants", variants},
                     {"model", c.model},
                     {"training", t},
                     {"evaluation", c.evaluation}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  try {
    c.name = j.value("name", c.name);
    c.task = j.at("task");
    c.simulation_budget = j.value("simulation_budget", c.simulation_budget);
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("data_seed") && !j.at("data_seed").is_null()) c.data_seed = j.at("data_seed").get<std::uint64_t>();
    if (j.contains("eval_seed") && !j.at("eval_seed").is_null()) c.eval_seed = j.at("eval_seed").get<std::uint64_t>();
    if (j.contains("variants")) {
      c.variants.clear();
      for (const auto& v : j.at("variants")) c.variants.push_back(training::variant_from_string(v.get<std::string>()));
    }
    if (j.contains("model")) c.model = j.at("model").get<training::ModelSpec>();
    nlohmann::json t = j.value("training", nlohmann::json::object());
    t["variant"] = "npe";
    if (t.contains("self_consistency") && t.at("self_consistency").contains("likelihood")) {
      const auto source = t.at("self_consistency").get<objectives::SelfConsistencyConfig>().source;
      c.sc_source = source;
      t["self_consistency"].erase("likelihood");
    }
    c.training = t.get<training::TrainConfig>();
    if (j.contains("evaluation")) c.evaluation = j.at("evaluation").get<EvaluationSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  for (auto v : c.variants) (void)run_config(c, v);
  // Build the task once so task errors surface at load time.
  (void)simulators::make_task(c.task);
}

nlohmann::json ExperimentConfig::resolved() const {
  nlohmann::json j = *this;
  j["task"] = simulators::make_task(task)->constants();
  j["task"]["name"] = simulators::make_task(task)->name();
  j["task_config"] = task;
  return j;
}

std::string ExperimentConfig::hash() const { return fnv_hex(resolved().dump()); }

std::string ExperimentConfig::training_hash() const {
  const nlohmann::json r = resolved();
  nlohmann::json t = r.at("training");
  t.erase("checkpoint_every");  // cadence does not change the trained model
  const nlohmann::json j{{"task", r.at("task")},
                         {"simulation_budget", r.at("simulation_budget")},
                         {"data_seed", r.at("data_seed")},
                         {"model", r.at("model")},
                         {"training", t}};
  return fnv_hex(j.dump());
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  return j.get<ExperimentConfig>();
}

fs::path Layout::seed_dir(std::uint64_t seed) const { return out / ("seed_" + std::to_string(seed)); }
fs::path Layout::run_dir(std::uint64_t seed, Variant v) const { return seed_dir(seed) / training::to_string(v); }

void write_resolved_config(const ExperimentConfig& config, const Layout& layout) {
  nlohmann::json j = config.resolved();
  j["config_hash"] = config.hash();
  j["training_hash"] = config.training_hash();
  write_text(layout.resolved_config(), j.dump(2) + "\n");
}

void simulate(const ExperimentConfig& config, const Layout& layout, const Logger& log) {
  const auto task = simulators::make_task(config.task);
  for (auto seed : config.seeds) {
    const auto [tr, va] = load_or_simulate(config, *task, layout, seed);
    note(log, "seed " + std::to_string(seed) + ": " + std::to_string(tr.size()) + " training / " +
                  std::to_string(va.size()) + " validation pairs (" + std::to_string(tr.rejected) + " rejected)");
  }
}

training::TrainResult train_run(const ExperimentConfig& config, const Layout& layout, std::uint64_t seed, Variant variant,
                                const Logger& log, const std::optional<fs::path>& checkpoint) {
  const auto task = simulators::make_task(config.task);
  const auto [tr, va] = load_or_simulate(config, *task, layout, seed);
  training::Models models = training::build_models(config.model, *task, variant, seed);
  training::fit_standardizers(models, *task, tr);
  const training::TrainConfig tc = run_config(config, variant);
  const std::string tag = training::to_string(variant) + " seed " + std::to_string(seed);
  const std::string hash = config.training_hash();
  const fs::path ckpt = checkpoint.value_or(layout.checkpoint(seed, variant));
  const nlohmann::json header{{"config_hash", hash},
                              {"experiment", config.name},
                              {"seed", seed},
                              {"variant", training::to_string(variant)},
                              {"epochs", tc.epochs}};

  training::TrainState resume;
  if (fs::exists(ckpt)) {
    const auto stored = training::read_checkpoint_header(ckpt);
    if (stored.value("config_hash", std::string()) != hash || stored.value("seed", std::uint64_t{0}) != seed ||
        stored.value("variant", std::string()) != training::to_string(variant) || !stored.contains("history_rows")) {
      throw CheckpointError("checkpoint '" + ckpt.string() + "' belongs to a different run or config; remove it to retrain");
    }
    training::load_checkpoint(ckpt, models, hash, &resume);
    if (resume.history.size() == static_cast<std::size_t>(tc.epochs)) {
      note(log, tag + ": checkpoint already at the final epoch, nothing to do");
      training::write_history_csv(resume.history, layout.history(seed, variant), hash);
      training::TrainResult done;
      done.history = resume.history;
      return done;
    }
    note(log, tag + ": resuming after epoch " + std::to_string(resume.history.size()));
  }

  auto on_epoch = [&](const training::EpochRecord& r) {
    if (log && (r.epoch % 10 == 0 || r.epoch + 1 == tc.epochs)) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "%s epoch %d: lambda %g loss %.4f base %.4f sc %.4g val %.4f", tag.c_str(), r.epoch,
                    r.lambda, r.loss, r.base_loss, r.sc_loss, r.val_loss);
      log(buf);
    }
  };
  auto on_checkpoint = [&](const training::TrainState& state) { training::save_checkpoint(ckpt, models, header, &state); };
  const auto result = training::train(models, *task, tr, va, tc, seed, on_epoch,
                                      resume.history.empty() ? nullptr : &resume, on_checkpoint);
  training::write_history_csv(result.history, layout.history(seed, variant), hash);
  write_text(layout.run_dir(seed, variant) / "timing.json",
             nlohmann::json{{"config_hash", hash},
                            {"resumed_after_epoch", resume.history.size()},
                            {"train_wall_seconds", result.wall_seconds}}
                     .dump(2) +
                 "\n");
  return result;
}

void train(const ExperimentConfig& config, const Layout& layout, const Logger& log) {
  for (auto seed : config.seeds) {
    for (auto v : config.variants) train_run(config, layout, seed, v, log);
  }
}

TestBed make_test_bed(const ExperimentConfig& config, const simulators::Task& task, std::uint64_t seed) {
  const auto& ev = config.evaluation;
  TestBed bed;
  const std::uint64_t sim = config.evaluation_seed(seed);
  bed.instances = training::generate_training_set(task, ev.test_instances, sim, SeedDomain::kTestSet);
  if (ev.reference == ReferenceKind::kNone) return bed;
  for (Index i = 0; i < bed.instances.size(); ++i) {
    Rng rng = Rng::stream(sim, SeedDomain::kEvaluation, 1000000 + static_cast<std::uint64_t>(i));
    const Matrix y = simulators::unflatten(bed.instances.data.row(i), task.data_shape());
    if (ev.reference == ReferenceKind::kExact) {
      const auto* conj = dynamic_cast<const simulators::ConjugateGaussian*>(&task);
      require(conj != nullptr, "evaluation: exact reference needs the conjugate_gaussian task");
      models::ConjugatePosterior exact(*conj);
      bed.reference.push_back(exact.sample_for(bed.instances.data.row(i), ev.posterior_samples, rng));
    } else if (ev.reference == ReferenceKind::kGrid) {
      diagnostics::GridReference grid(task, y, ev.grid_resolution, 2);
      bed.reference.push_back(grid.sample(ev.posterior_samples, rng));
    } else if (ev.reference == ReferenceKind::kRejection) {
      bed.reference.push_back(diagnostics::rejection_reference(task, y, ev.posterior_samples, rng).samples);
    } else {
      bed.reference.push_back(diagnostics::metropolis_reference(task, y, ev.posterior_samples, rng, ev.metropolis).samples);
    }
  }
  return bed;
}

nlohmann::json evaluate_run(const ExperimentConfig& config, const Layout& layout, std::uint64_t seed, Variant variant,
                            const TestBed& bed, const Logger& log, const std::optional<fs::path>& checkpoint) {
  const auto task = simulators::make_task(config.task);
  const auto& ev = config.evaluation;
  training::Models models = training::build_models(config.model, *task, variant, seed);
  training::load_checkpoint(checkpoint.value_or(layout.checkpoint(seed, variant)), models, config.training_hash());
  models::ExplicitLikelihood explicit_lik(*task);
  const models::LikelihoodModel* lik = models.likelihood ? static_cast<const models::LikelihoodModel*>(models.likelihood.get())
                                       : task->has_loglik() ? &explicit_lik
                                                            : nullptr;
  const models::PosteriorModel& post = *models.posterior;
  const fs::path dir = layout.run_dir(seed, variant);
  const std::string vname = training::to_string(variant);

  nlohmann::json instances = nlohmann::json::array();
  std::vector<double> mmds;
  std::vector<double> widths;
  const std::string full_hash = config.hash();
  std::string report_csv = hash_line(full_hash) + "index,hash,mmd,lml_lower,lml_upper,lml_width,loglik_truth\n";
  std::string samples_csv = hash_line(full_hash) + "instance,draw";
  for (int d = 0; d < task->param_dim(); ++d) samples_csv += ",theta_" + std::to_string(d);
  samples_csv += "\n";
  const Vector truth_lp = post.log_prob(bed.instances.theta, bed.instances.data);
  for (Index i = 0; i < bed.instances.size(); ++i) {
    const RowVector y = bed.instances.data.row(i);
    nlohmann::json inst{{"index", i}, {"hash", diagnostics::instance_hash(bed.instances.theta.row(i), y)}};
    Rng rng = Rng::stream(seed, SeedDomain::kEvaluation, static_cast<std::uint64_t>(i));
    const Matrix draws = post.sample_for(y, ev.posterior_samples, rng);
    std::string mmd_cell = "";
    if (!bed.reference.empty()) {
      const double m = diagnostics::mmd(draws, bed.reference[static_cast<std::size_t>(i)]);
      inst["mmd"] = m;
      mmds.push_back(m);
      mmd_cell = fmt(m);
    }
    std::string lml_cells = ",,";
    if (lik != nullptr && ev.lml_draws >= 2) {
      Rng lrng = Rng::stream(seed, SeedDomain::kEvaluation, 2000000 + static_cast<std::uint64_t>(i));
      const auto est = diagnostics::log_marginal_estimates(*task, post, *lik, y, ev.lml_draws, lrng);
      if (est.size() >= 2) {
        const auto iv = diagnostics::lml_interval(est, ev.lml_level);
        inst["lml_lower"] = iv.lower;
        inst["lml_upper"] = iv.upper;
        inst["lml_width"] = iv.width();
        widths.push_back(iv.width());
        lml_cells = fmt(iv.lower) + "," + fmt(iv.upper) + "," + fmt(iv.width());
      }
    }
    inst["loglik_truth"] = truth_lp(i);
    instances.push_back(inst);
    report_csv += std::to_string(i) + "," + inst["hash"].get<std::string>() + "," + mmd_cell + "," + lml_cells + "," +
                  fmt(truth_lp(i)) + "\n";
    if (i < ev.sample_instances) {
      for (Index k = 0; k < draws.rows(); ++k) {
        samples_csv += std::to_string(i) + "," + std::to_string(k);
        for (Index d = 0; d < draws.cols(); ++d) samples_csv += "," + fmt(draws(k, d));
        samples_csv += "\n";
      }
    }
  }

  const auto truth = diagnostics::loglik_at_truth(post, bed.instances.theta, bed.instances.data);
  nlohmann::json metrics{{"loglik_truth_mean", truth.mean}, {"loglik_truth_se", truth.standard_error}};
  if (!mmds.empty()) {
    metrics["mmd_median"] = diagnostics::quantile(mmds, 0.5);
    double s = 0.0;
    for (double m : mmds) s += m;
    metrics["mmd_mean"] = s / static_cast<double>(mmds.size());
  }
  if (!widths.empty()) {
    double s = 0.0;
    for (double w : widths) s += w;
    metrics["lml_width_mean"] = s / static_cast<double>(widths.size());
    metrics["lml_width_median"] = diagnostics::quantile(widths, 0.5);
    metrics["lml_instances"] = widths.size();
  }
  std::string ecdf_csv = hash_line(full_hash) + "dim,rank,expected,ecdf,lower,upper\n";
  if (ev.sbc_rows > 0) {
    const auto sbc = diagnostics::sbc_ranks(*task, post, ev.sbc_rows, ev.sbc_draws, seed);
    const auto band = diagnostics::ecdf_band(sbc, ev.ecdf_alpha);
    metrics["sbc_pass"] = band.pass;
    for (const auto& p : band.points) {
      ecdf_csv += std::to_string(p.dim) + "," + std::to_string(p.rank) + "," + fmt(p.expected) + "," + fmt(p.ecdf) + "," +
                  fmt(p.lower) + "," + fmt(p.upper) + "\n";
    }
  }
  const auto history = training::read_history_csv(layout.history(seed, variant));
  if (!history.empty()) metrics["final_val_loss"] = history.back().val_loss;

  const nlohmann::json report{{"experiment", config.name},
                              {"config_hash", full_hash},
                              {"training_hash", config.training_hash()},
                              {"task", task->name()},
                              {"seed", seed},
                              {"variant", vname},
                              {"metrics", metrics},
                              {"instances", instances}};
  write_text(dir / "report.json", report.dump(2) + "\n");
  write_text(dir / "report.csv", report_csv);
  write_text(dir / ("ecdf_" + vname + ".csv"), ecdf_csv);
  write_text(dir / ("samples_" + vname + ".csv"), samples_csv);
  note(log, vname + " seed " + std::to_string(seed) + ": " + metrics.dump());
  return report;
}

void evaluate(const ExperimentConfig& config, const Layout& layout, const Logger& log) {
  const auto task = simulators::make_task(config.task);
  // Seeds that share an evaluation seed share the test bed.
  std::optional<std::uint64_t> bed_seed;
  TestBed bed;
  for (auto seed : config.seeds) {
    if (bed_seed != config.evaluation_seed(seed)) {
      bed = make_test_bed(config, *task, seed);
      bed_seed = config.evaluation_seed(seed);
    }
    for (auto v : config.variants) evaluate_run(config, layout, seed, v, bed, log);
  }
}

nlohmann::json compare(const ExperimentConfig& config, const Layout& layout, const Logger& log) {
  const std::vector<std::pair<Variant, Variant>> candidates{{Variant::kNpe, Variant::kScNpe},
                                                            {Variant::kNple, Variant::kScNple}};
  auto has = [&](Variant v) { return std::find(config.variants.begin(), config.variants.end(), v) != config.variants.end(); };
  nlohmann::json rows = nlohmann::json::array();
  nlohmann::json summary = nlohmann::json::array();
  std::string csv = hash_line(config.hash()) + "seed,baseline,candidate,metric,pairs,wins_candidate,wins_baseline,median_baseline,median_candidate,"
                    "sign_test_p\n";
  for (const auto& [base, cand] : candidates) {
    if (!has(base) || !has(cand)) continue;
    for (const std::string metric : {"mmd", "lml_width"}) {
      int seeds_better = 0;
      int seeds_compared = 0;
      for (auto seed : config.seeds) {
        const auto ra = read_json(layout.report(seed, cand));
        const auto rb = read_json(layout.report(seed, base));
        if (!diagnostics::has_metric(ra, metric) || !diagnostics::has_metric(rb, metric)) continue;
        const diagnostics::Comparison c = diagnostics::compare_metric(ra, rb, metric);
        ++seeds_compared;
        if (c.median_a < c.median_b) ++seeds_better;
        rows.push_back({{"seed", seed},
                        {"baseline", training::to_string(base)},
                        {"candidate", training::to_string(cand)},
                        {"metric", metric},
                        {"pairs", c.pairs},
                        {"wins_candidate", c.wins_a},
                        {"wins_baseline", c.wins_b},
                        {"median_baseline", c.median_b},
                        {"median_candidate", c.median_a},
                        {"sign_test_p", c.sign_test_p}});
        csv += std::to_string(seed) + "," + training::to_string(base) + "," + training::to_string(cand) + "," + metric +
               "," + std::to_string(c.pairs) + "," + fmt(c.wins_a) + "," + fmt(c.wins_b) + "," + fmt(c.median_b) + "," +
               fmt(c.median_a) + "," + fmt(c.sign_test_p) + "\n";
      }
      if (seeds_compared > 0) {
        summary.push_back({{"baseline", training::to_string(base)},
                           {"candidate", training::to_string(cand)},
                           {"metric", metric},
                           {"seeds", seeds_compared},
                           {"seeds_candidate_better", seeds_better}});
        note(log, training::to_string(cand) + " vs " + training::to_string(base) + " on " + metric + ": better median in " +
                      std::to_string(seeds_better) + "/" + std::to_string(seeds_compared) + " seeds");
      }
    }
  }
  const nlohmann::json out{{"experiment", config.name}, {"config_hash", config.hash()}, {"per_seed", rows}, {"summary", summary}};
  write_text(layout.out / "compare.json", out.dump(2) + "\n");
  write_text(layout.out / "compare.csv", csv);
  return out;
}

nlohmann::json compare_reports(const fs::path& report_a, const fs::path& report_b, const fs::path& out,
                               const Logger& log) {
  const auto ra = read_json(report_a);
  const auto rb = read_json(report_b);
  nlohmann::json metrics = nlohmann::json::array();
  std::string csv = hash_line(ra.value("config_hash", std::string())) + "metric,index,hash,delta\n";
  for (const std::string metric : {"mmd", "lml_width"}) {
    if (!diagnostics::has_metric(ra, metric) || !diagnostics::has_metric(rb, metric)) continue;
    const auto c = diagnostics::compare_metric(ra, rb, metric);
    std::size_t k = 0;
    for (const auto& inst : ra.at("instances")) {
      if (!inst.contains(metric) || !inst.at(metric).is_number()) continue;
      csv += metric + "," + std::to_string(inst.at("index").get<long>()) + "," + inst.at("hash").get<std::string>() + "," +
             fmt(c.deltas[k++]) + "\n";
    }
    metrics.push_back({{"metric", metric},
                       {"pairs", c.pairs},
                       {"fraction_a_better", c.fraction_a_better},
                       {"median_a", c.median_a},
                       {"median_b", c.median_b},
                       {"sign_test_p", c.sign_test_p},
                       {"deltas", c.deltas}});
    note(log, metric + ": A better on " + fmt(c.fraction_a_better) + " of " + std::to_string(c.pairs) +
                  " instances, sign test p = " + fmt(c.sign_test_p));
  }
  require(!metrics.empty(), "compare: the reports share no metric");
  const nlohmann::json result{{"config_hash_a", ra.value("config_hash", std::string())},
                              {"config_hash_b", rb.value("config_hash", std::string())},
                              {"report_a", report_a.string()},
                              {"report_b", report_b.string()},
                              {"metrics", metrics}};
  write_text(out / "compare_reports.json", result.dump(2) + "\n");
  write_text(out / "compare_reports.csv", csv);
  return result;
}

void run_all(const ExperimentConfig& config, const Layout& layout, const Logger& log) {
  write_resolved_config(config, layout);
  simulate(config, layout, log);
  train(config, layout, log);
  evaluate(config, layout, log);
  compare(config, layout, log);
}

}  // namespace scabi::pipeline
