#include "scabi/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace scabi::training {

namespace {

constexpr char kSetMagic[8] = {'S', 'C', 'A', 'B', 'I', 'T', 'S', '1'};
constexpr char kCheckpointMagic[8] = {'S', 'C', 'A', 'B', 'I', 'C', 'K', '1'};
constexpr std::uint32_t kFormatVersion = 1;

// Container: magic, version, header length, JSON header, value count, raw
// doubles, FNV-1a of everything before the checksum.
void write_container(const std::filesystem::path& path, const char (&magic)[8], const nlohmann::json& header,
                     const std::vector<double>& values) {
  std::string bytes(magic, 8);
  auto append = [&bytes](const void* p, std::size_t n) { bytes.append(static_cast<const char*>(p), n); };
  append(&kFormatVersion, sizeof kFormatVersion);
  const std::string text = header.dump();
  const std::uint64_t len = text.size();
  append(&len, sizeof len);
  bytes += text;
  const std::uint64_t count = values.size();
  append(&count, sizeof count);
  append(values.data(), values.size() * sizeof(double));
  Fnv1a h;
  h.update(bytes);
  const std::uint64_t digest = h.digest();
  append(&digest, sizeof digest);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write beside the target and rename, so a crash never leaves a torn file.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

struct Container {
  nlohmann::json header;
  std::vector<double> values;
};

Container read_container(const std::filesystem::path& path, const char (&magic)[8]) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = "'" + path.string() + "': ";
  std::size_t pos = 0;
  auto take = [&](void* dst, std::size_t n) {
    if (bytes.size() < pos + n) throw CheckpointError(where + "truncated file");
    std::memcpy(dst, bytes.data() + pos, n);
    pos += n;
  };
  char got[8];
  take(got, 8);
  if (std::memcmp(got, magic, 8) != 0) throw CheckpointError(where + "bad magic");
  std::uint32_t version = 0;
  take(&version, sizeof version);
  if (version != kFormatVersion) throw CheckpointError(where + "unsupported format version " + std::to_string(version));
  std::uint64_t len = 0;
  take(&len, sizeof len);
  if (len > bytes.size()) throw CheckpointError(where + "truncated file");
  std::string text(len, '\0');
  take(text.data(), len);
  std::uint64_t count = 0;
  take(&count, sizeof count);
  if (count > bytes.size() / sizeof(double)) throw CheckpointError(where + "truncated file");
  Container c;
  c.values.resize(count);
  take(c.values.data(), count * sizeof(double));
  Fnv1a h;
  h.update(bytes.data(), pos);
  std::uint64_t digest = 0;
  take(&digest, sizeof digest);
  if (digest != h.digest()) throw CheckpointError(where + "checksum mismatch");
  if (pos != bytes.size()) throw CheckpointError(where + "trailing bytes");
  try {
    c.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(where + "bad header: " + e.what());
  }
  return c;
}

void append_matrix(std::vector<double>& out, const Matrix& m) {
  // Column-major storage order; shapes are recorded in the header.
  out.insert(out.end(), m.data(), m.data() + m.size());
}

DistributionSpec resize_base(const DistributionSpec& base, int dim) {
  if (base.kind == DistributionKind::kStudentT) return DistributionSpec::student_t(dim, base.dof);
  return DistributionSpec::standard_normal(dim);
}

// Every standardizer vector, in a fixed order.
std::vector<Vector*> standardizer_slots(Models& m, std::vector<flows::Standardizer>& scratch) {
  scratch.clear();
  scratch.push_back(m.posterior->flow().target_standardizer());
  scratch.push_back(m.posterior->flow().cond_standardizer());
  if (m.posterior->has_summary()) scratch.push_back(m.posterior->summary().input_standardizer());
  if (m.likelihood) {
    scratch.push_back(m.likelihood->flow().target_standardizer());
    scratch.push_back(m.likelihood->flow().cond_standardizer());
  }
  std::vector<Vector*> out;
  for (auto& s : scratch) {
    out.push_back(&s.shift);
    out.push_back(&s.scale);
  }
  return out;
}

void restore_standardizers(Models& m, std::vector<flows::Standardizer>& scratch) {
  std::size_t i = 0;
  m.posterior->flow().set_standardizers(scratch[0], scratch[1]);
  i = 2;
  if (m.posterior->has_summary()) m.posterior->summary().set_input_standardizer(scratch[i++]);
  if (m.likelihood) m.likelihood->flow().set_standardizers(scratch[i], scratch[i + 1]);
}

constexpr std::size_t kHistoryFields = 11;

void append_history(std::vector<double>& out, const std::vector<EpochRecord>& history) {
  for (const auto& r : history) {
    const double row[kHistoryFields] = {static_cast<double>(r.epoch),
                                        r.lambda,
                                        r.loss,
                                        r.base_loss,
                                        r.sc_loss,
                                        r.val_loss,
                                        r.grad_norm,
                                        static_cast<double>(r.clamped),
                                        static_cast<double>(r.excluded),
                                        static_cast<double>(r.degenerate),
                                        static_cast<double>(r.skipped)};
    out.insert(out.end(), row, row + kHistoryFields);
  }
}

EpochRecord history_row(const double* v) {
  EpochRecord r;
  r.epoch = static_cast<int>(v[0]);
  r.lambda = v[1];
  r.loss = v[2];
  r.base_loss = v[3];
  r.sc_loss = v[4];
  r.val_loss = v[5];
  r.grad_norm = v[6];
  r.clamped = static_cast<long>(v[7]);
  r.excluded = static_cast<long>(v[8]);
  r.degenerate = static_cast<long>(v[9]);
  r.skipped = static_cast<long>(v[10]);
  return r;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

objectives::Batch TrainingSet::batch(const std::vector<Index>& rows) const {
  objectives::Batch b;
  b.theta.resize(static_cast<Index>(rows.size()), theta.cols());
  b.data.resize(static_cast<Index>(rows.size()), data.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    b.theta.row(static_cast<Index>(i)) = theta.row(rows[i]);
    b.data.row(static_cast<Index>(i)) = data.row(rows[i]);
  }
  return b;
}

TrainingSet generate_training_set(const simulators::Task& task, Index n, std::uint64_t seed, SeedDomain domain,
                                  double max_rejection_rate) {
  require(n >= 1, "generate_training_set: n must be >= 1");
  TrainingSet set;
  set.theta.resize(n, task.param_dim());
  set.data.resize(n, task.data_shape().flat());
  const long limit = std::max<long>(10, static_cast<long>(std::ceil(max_rejection_rate * static_cast<double>(n))));
  Rng rng = Rng::stream(seed, domain, 0);
  for (Index i = 0; i < n;) {
    const Vector theta = task.sample_prior(1, rng).row(0).transpose();
    try {
      const Matrix y = task.simulate(theta, rng);
      set.theta.row(i) = theta.transpose();
      set.data.row(i) = simulators::flatten(y);
      ++i;
    } catch (const SimulationRejected&) {
      if (++set.rejected > limit) {
        throw SimulationError(task.name() + ": rejection rate too high (" + std::to_string(set.rejected) +
                              " rejections after " + std::to_string(i) + " accepted)");
      }
    }
  }
  return set;
}

void save_training_set(const TrainingSet& set, const std::filesystem::path& path, const nlohmann::json& meta) {
  nlohmann::json header = meta.is_object() ? meta : nlohmann::json::object();
  header.update(nlohmann::json{{"kind", "training_set"},
                              {"rows", set.theta.rows()},
                              {"theta_cols", set.theta.cols()},
                              {"data_cols", set.data.cols()},
                              {"rejected", set.rejected}});
  std::vector<double> values;
  append_matrix(values, set.theta);
  append_matrix(values, set.data);
  write_container(path, kSetMagic, header, values);
}

nlohmann::json read_training_set_header(const std::filesystem::path& path) {
  return read_container(path, kSetMagic).header;
}

TrainingSet load_training_set(const std::filesystem::path& path) {
  const Container c = read_container(path, kSetMagic);
  try {
    const Index rows = c.header.at("rows").get<Index>();
    const Index tc = c.header.at("theta_cols").get<Index>();
    const Index dc = c.header.at("data_cols").get<Index>();
    if (static_cast<Index>(c.values.size()) != rows * (tc + dc)) throw CheckpointError("training set: size mismatch");
    TrainingSet set;
    set.theta = Eigen::Map<const Matrix>(c.values.data(), rows, tc);
    set.data = Eigen::Map<const Matrix>(c.values.data() + rows * tc, rows, dc);
    set.rejected = c.header.at("rejected").get<long>();
    return set;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("training set: bad header: ") + e.what());
  }
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kNpe: return "npe";
    case Variant::kScNpe: return "sc-npe";
    case Variant::kNple: return "nple";
    case Variant::kScNple: return "sc-nple";
  }
  return "unknown";
}

Variant variant_from_string(const std::string& name) {
  if (name == "npe") return Variant::kNpe;
  if (name == "sc-npe") return Variant::kScNpe;
  if (name == "nple") return Variant::kNple;
  if (name == "sc-nple") return Variant::kScNple;
  throw ConfigError("unknown variant '" + name + "' (expected npe, sc-npe, nple or sc-nple)");
}

void to_json(nlohmann::json& j, const ModelSpec& s) {
  j = nlohmann::json{{"posterior", s.posterior}, {"likelihood", s.likelihood}};
  if (s.summary) j["summary"] = *s.summary;
}

void from_json(const nlohmann::json& j, ModelSpec& s) {
  s = ModelSpec{};
  if (j.contains("posterior")) s.posterior = j.at("posterior").get<flows::FlowSpec>();
  if (j.contains("likelihood")) s.likelihood = j.at("likelihood").get<flows::FlowSpec>();
  if (j.contains("summary") && !j.at("summary").is_null()) s.summary = j.at("summary").get<summaries::SummarySpec>();
}

ad::ParameterList Models::parameters() {
  ad::ParameterList out;
  posterior->collect_parameters(out);
  if (likelihood) likelihood->collect_parameters(out);
  return out;
}

Models build_models(const ModelSpec& spec, const simulators::Task& task, Variant variant, std::uint64_t seed) {
  const auto shape = task.data_shape();
  Models m;
  std::optional<summaries::SummaryNet> summary;
  flows::FlowSpec ps = spec.posterior;
  ps.dim = task.param_dim();
  ps.cond_dim = shape.flat();
  if (spec.summary) {
    summaries::SummarySpec ss = *spec.summary;
    ss.input_dim = shape.cols;
    ss.rows_per_set = shape.rows;
    Rng rng = Rng::stream(seed, SeedDomain::kInit, 1);
    summary.emplace(ss, rng);
    ps.cond_dim = ss.output_dim;
  }
  ps.base = resize_base(ps.base, ps.dim);
  Rng prng = Rng::stream(seed, SeedDomain::kInit, 0);
  m.posterior = std::make_unique<models::NeuralPosterior>(flows::ConditionalFlow(ps, prng), std::move(summary));
  if (learns_likelihood(variant)) {
    flows::FlowSpec ls = spec.likelihood;
    ls.dim = shape.flat();
    ls.cond_dim = task.param_dim();
    ls.base = resize_base(ls.base, ls.dim);
    Rng lrng = Rng::stream(seed, SeedDomain::kInit, 2);
    m.likelihood = std::make_unique<models::NeuralLikelihood>(flows::ConditionalFlow(ls, lrng));
  }
  return m;
}

void fit_standardizers(Models& models, const simulators::Task& task, const TrainingSet& set) {
  const auto shape = task.data_shape();
  auto& flow = models.posterior->flow();
  if (models.posterior->has_summary()) {
    models.posterior->summary().set_input_standardizer(
        flows::Standardizer::fit(summaries::canonical_rows(set.data, shape.rows, shape.cols)));
    flow.set_standardizers(flows::Standardizer::fit(set.theta), flows::Standardizer::identity(flow.cond_dim()));
  } else {
    flow.set_standardizers(flows::Standardizer::fit(set.theta), flows::Standardizer::fit(set.data));
  }
  if (models.likelihood) {
    models.likelihood->flow().set_standardizers(flows::Standardizer::fit(set.data), flows::Standardizer::fit(set.theta));
  }
}

void TrainConfig::validate() const {
  require(epochs >= 1, "training: epochs must be >= 1");
  require(batch_size >= 1, "training: batch_size must be >= 1");
  require(validation_fraction >= 0.0 && validation_fraction <= 1.0, "training: validation_fraction must be in [0, 1]");
  require(failure_limit >= 1, "training: failure_limit must be >= 1");
  require(checkpoint_every >= 0, "training: checkpoint_every must be >= 0");
  schedule.validate();
  self_consistency.validate();
  optimizer.validate();
  if (variant == Variant::kScNpe) {
    require(self_consistency.source == objectives::LikelihoodSource::kExplicit,
            "training: sc-npe needs the explicit likelihood");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"variant", to_string(c.variant)},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"schedule", c.schedule},
                     {"self_consistency", c.self_consistency},
                     {"optimizer", c.optimizer},
                     {"validation_fraction", c.validation_fraction},
                     {"failure_limit", c.failure_limit},
                     {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.variant = variant_from_string(j.value("variant", std::string("npe")));
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  if (j.contains("schedule")) c.schedule = j.at("schedule").get<objectives::ScheduleSpec>();
  if (j.contains("self_consistency")) {
    nlohmann::json sc = j.at("self_consistency");
    // Likelihood variants use their own learned likelihood unless told otherwise.
    if (!sc.contains("likelihood")) sc["likelihood"] = learns_likelihood(c.variant) ? "learned" : "explicit";
    c.self_consistency = sc.get<objectives::SelfConsistencyConfig>();
  } else if (learns_likelihood(c.variant)) {
    c.self_consistency.source = objectives::LikelihoodSource::kLearned;
  }
  if (j.contains("optimizer")) c.optimizer = j.at("optimizer").get<optim::OptimizerSpec>();
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.failure_limit = j.value("failure_limit", c.failure_limit);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.validate();
}

double evaluate_base_loss(const Models& models, const TrainingSet& set, Index chunk) {
  require(set.size() >= 1, "evaluate_base_loss: empty set");
  double total = 0.0;
  for (Index start = 0; start < set.size(); start += chunk) {
    const Index n = std::min(chunk, set.size() - start);
    std::vector<Index> rows(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) rows[static_cast<std::size_t>(i)] = start + i;
    const objectives::Batch b = set.batch(rows);
    ad::Tape tape(false);
    double v = objectives::npe_loss(tape, *models.posterior, b).value()(0, 0);
    if (models.likelihood) v += objectives::likelihood_loss(tape, *models.likelihood, b).value()(0, 0);
    total += v * static_cast<double>(n);
  }
  return total / static_cast<double>(set.size());
}

TrainResult train(Models& models, const simulators::Task& task, const TrainingSet& train_set,
                  const TrainingSet& validation_set, const TrainConfig& config, std::uint64_t seed,
                  const EpochCallback& on_epoch, const TrainState* resume,
                  const CheckpointCallback& on_checkpoint) {
  config.validate();
  require(train_set.size() >= 1, "train: empty training set");
  require(static_cast<bool>(models.likelihood) == learns_likelihood(config.variant),
          "train: models do not match the variant");
  const auto started = std::chrono::steady_clock::now();
  const ad::ParameterList params = models.parameters();
  optim::Optimizer optimizer(config.optimizer, params);
  models::ExplicitLikelihood explicit_lik(task);
  const models::LikelihoodModel* explicit_ptr = task.has_loglik() ? &explicit_lik : nullptr;
  const Index n = train_set.size();
  const Index batches = (n + config.batch_size - 1) / config.batch_size;
  const long total_steps = static_cast<long>(batches) * config.epochs;

  TrainResult result;
  int first_epoch = 0;
  if (resume) {
    require(resume->history.size() <= static_cast<std::size_t>(config.epochs), "train: resume state is past the last epoch");
    result.history = resume->history;
    first_epoch = static_cast<int>(resume->history.size());
    if (first_epoch > 0) optimizer.set_state(resume->optimizer);
  }
  // Streams are keyed by epoch and global step, so a resumed run replays the
  // exact shuffles and draws of an uninterrupted one.
  long step = static_cast<long>(batches) * first_epoch;
  int consecutive_failures = 0;
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (int epoch = first_epoch; epoch < config.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lambda = uses_self_consistency(config.variant) ? objectives::schedule_weight(config.schedule, epoch, config.epochs)
                                                       : 0.0;
    for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng shuffle = Rng::stream(seed, SeedDomain::kShuffle, static_cast<std::uint64_t>(epoch));
    for (Index i = n - 1; i > 0; --i) {
      const auto j = static_cast<Index>(shuffle.next() % static_cast<std::uint64_t>(i + 1));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    double weight = 0.0;
    for (Index b = 0; b < batches; ++b, ++step) {
      const Index start = b * config.batch_size;
      const Index count = std::min<Index>(config.batch_size, n - start);
      const std::vector<Index> rows(order.begin() + start, order.begin() + start + count);
      const objectives::Batch batch = train_set.batch(rows);
      Rng sc_rng = Rng::stream(seed, SeedDomain::kSelfConsistency, static_cast<std::uint64_t>(step));
      try {
        ad::zero_grads(params);
        ad::Tape tape;
        const objectives::LossParts parts =
            objectives::combined_loss(tape, *models.posterior, models.likelihood.get(), explicit_ptr, task.prior(), batch,
                                      rec.lambda, config.self_consistency, sc_rng);
        const double total = parts.total.value()(0, 0);
        if (!std::isfinite(total)) throw TrainingError("non-finite loss");
        tape.backward(parts.total);
        const double norm = optimizer.step(total_steps);
        consecutive_failures = 0;
        const double w = static_cast<double>(count);
        rec.loss += w * total;
        rec.base_loss += w * parts.base;
        rec.sc_loss += w * parts.sc;
        rec.grad_norm += w * norm;
        weight += w;
        rec.clamped += parts.stats.clamped;
        rec.excluded += parts.stats.excluded;
        rec.degenerate += parts.stats.degenerate;
      } catch (const TrainingError& e) {
        ++rec.skipped;
        if (++consecutive_failures >= config.failure_limit) {
          throw TrainingError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", " +
                                  std::to_string(consecutive_failures) + " consecutive failed steps)",
                              e.item(), epoch);
        }
      }
    }
    if (weight > 0.0) {
      rec.loss /= weight;
      rec.base_loss /= weight;
      rec.sc_loss /= weight;
      rec.grad_norm /= weight;
    }
    rec.val_loss = validation_set.size() > 0 ? evaluate_base_loss(models, validation_set)
                                             : std::numeric_limits<double>::quiet_NaN();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    const int done = epoch + 1;
    const bool due = done == config.epochs || (config.checkpoint_every > 0 && done % config.checkpoint_every == 0);
    if (on_checkpoint && due) on_checkpoint(TrainState{result.history, optimizer.state()});
  }
  result.steps = optimizer.steps_taken();
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path,
                       const std::string& config_hash) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  if (!config_hash.empty()) out << "# config_hash: " << config_hash << '\n';
  out << "epoch,lambda,loss,base_loss,sc_loss,val_loss,grad_norm,clamped,excluded,degenerate,skipped\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << fmt_double(r.lambda) << ',' << fmt_double(r.loss) << ',' << fmt_double(r.base_loss) << ','
        << fmt_double(r.sc_loss) << ',' << fmt_double(r.val_loss) << ',' << fmt_double(r.grad_norm) << ','
        << r.clamped << ',' << r.excluded << ',' << r.degenerate << ',' << r.skipped << '\n';
  }
}

std::vector<EpochRecord> read_history_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  std::string line;
  do {
    if (!std::getline(in, line)) return {};
  } while (line.rfind('#', 0) == 0);  // comment lines, then the column header
  std::vector<EpochRecord> out;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 11) throw std::runtime_error("history: malformed row '" + line + "'");
    EpochRecord r;
    r.epoch = std::stoi(f[0]);
    r.lambda = std::stod(f[1]);
    r.loss = std::stod(f[2]);
    r.base_loss = std::stod(f[3]);
    r.sc_loss = std::stod(f[4]);
    r.val_loss = f[5] == "nan" || f[5] == "-nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(f[5]);
    r.grad_norm = std::stod(f[6]);
    r.clamped = std::stol(f[7]);
    r.excluded = std::stol(f[8]);
    r.degenerate = std::stol(f[9]);
    r.skipped = std::stol(f[10]);
    out.push_back(r);
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, Models& models, const nlohmann::json& header,
                     const TrainState* state) {
  require(header.contains("config_hash"), "save_checkpoint: header needs config_hash");
  nlohmann::json h = header;
  nlohmann::json shapes = nlohmann::json::array();
  std::vector<double> values;
  for (const auto* p : models.parameters()) {
    shapes.push_back({p->name, p->value.rows(), p->value.cols()});
    append_matrix(values, p->value);
  }
  std::vector<flows::Standardizer> scratch;
  nlohmann::json norms = nlohmann::json::array();
  for (Vector* v : standardizer_slots(models, scratch)) {
    norms.push_back(v->size());
    append_matrix(values, *v);
  }
  h["parameters"] = shapes;
  h["standardizers"] = norms;
  if (state) {
    h["epoch"] = state->history.size();
    h["history_rows"] = state->history.size();
    h["optimizer_values"] = state->optimizer.size();
    append_history(values, state->history);
    values.insert(values.end(), state->optimizer.data(), state->optimizer.data() + state->optimizer.size());
  }
  write_container(path, kCheckpointMagic, h, values);
}

nlohmann::json load_checkpoint(const std::filesystem::path& path, Models& models, const std::string& expected_hash,
                               TrainState* state) {
  const Container c = read_container(path, kCheckpointMagic);
  const std::string where = "checkpoint '" + path.string() + "': ";
  try {
    const std::string hash = c.header.at("config_hash").get<std::string>();
    if (!expected_hash.empty() && hash != expected_hash) {
      throw CheckpointError(where + "config hash " + hash + " does not match " + expected_hash);
    }
    const auto params = models.parameters();
    const auto& shapes = c.header.at("parameters");
    if (shapes.size() != params.size()) throw CheckpointError(where + "parameter count mismatch");
    std::size_t pos = 0;
    auto take = [&](Index count) {
      if (pos + static_cast<std::size_t>(count) > c.values.size()) throw CheckpointError(where + "value count mismatch");
      const double* p = c.values.data() + pos;
      pos += static_cast<std::size_t>(count);
      return p;
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
      ad::Parameter& p = *params[i];
      if (shapes[i].at(0).get<std::string>() != p.name || shapes[i].at(1).get<Index>() != p.value.rows() ||
          shapes[i].at(2).get<Index>() != p.value.cols()) {
        throw CheckpointError(where + "parameter '" + p.name + "' does not match the model");
      }
      p.value = Eigen::Map<const Matrix>(take(p.value.size()), p.value.rows(), p.value.cols());
    }
    std::vector<flows::Standardizer> scratch;
    const auto slots = standardizer_slots(models, scratch);
    const auto& norms = c.header.at("standardizers");
    if (norms.size() != slots.size()) throw CheckpointError(where + "standardizer count mismatch");
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const Index len = norms[i].get<Index>();
      if (len != slots[i]->size()) throw CheckpointError(where + "standardizer size mismatch");
      *slots[i] = Eigen::Map<const Vector>(take(len), len);
    }
    TrainState stored;
    if (c.header.contains("history_rows")) {
      const auto rows = c.header.at("history_rows").get<std::size_t>();
      const double* h = take(static_cast<Index>(rows * kHistoryFields));
      for (std::size_t r = 0; r < rows; ++r) stored.history.push_back(history_row(h + r * kHistoryFields));
      const Index count = c.header.at("optimizer_values").get<Index>();
      stored.optimizer = Eigen::Map<const Vector>(take(count), count);
    }
    if (pos != c.values.size()) throw CheckpointError(where + "value count mismatch");
    restore_standardizers(models, scratch);
    if (state) *state = std::move(stored);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(where + "bad header: " + e.what());
  }
  return c.header;
}

nlohmann::json read_checkpoint_header(const std::filesystem::path& path) {
  return read_container(path, kCheckpointMagic).header;
}

}  // namespace scabi::training
