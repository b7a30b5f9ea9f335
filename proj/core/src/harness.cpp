#include "metaepi/harness.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <future>
#include <iterator>
#include <map>
#include <sstream>

#include "metaepi/errors.hpp"

namespace metaepi {

namespace {

constexpr std::string_view kEchoBegin = "# config begin";
constexpr std::string_view kEchoEnd = "# config end";

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_unsigned(std::string_view key, std::string_view text) {
  unsigned long long v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
    throw ConfigError("key '" + std::string(key) + "': expected a non-negative integer, got '" +
                      std::string(text) + "'");
  }
  return static_cast<T>(v);
}

double parse_real(std::string_view key, std::string_view text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
    throw ConfigError("key '" + std::string(key) + "': expected a number, got '" + std::string(text) + "'");
  }
  return v;
}

// Shortest text that parses back to the same double.
std::string exact(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

struct Field {
  std::function<void(ExperimentConfig&, std::string_view key, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T>
Field unsigned_field(T ExperimentConfig::*member) {
  return {[member](ExperimentConfig& c, std::string_view k, std::string_view v) {
            c.*member = parse_unsigned<T>(k, v);
          },
          [member](const ExperimentConfig& c) { return std::to_string(c.*member); }};
}

Field real_field(double ExperimentConfig::*member) {
  return {[member](ExperimentConfig& c, std::string_view k, std::string_view v) { c.*member = parse_real(k, v); },
          [member](const ExperimentConfig& c) { return exact(c.*member); }};
}

Field text_field(std::string ExperimentConfig::*member) {
  return {[member](ExperimentConfig& c, std::string_view, std::string_view v) { c.*member = std::string(v); },
          [member](const ExperimentConfig& c) { return c.*member; }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"data_bank", text_field(&ExperimentConfig::data_bank)},
      {"data_labels", text_field(&ExperimentConfig::data_labels)},
      {"data_prototypes", text_field(&ExperimentConfig::data_prototypes)},
      {"algo",
       {[](ExperimentConfig& c, std::string_view, std::string_view v) { c.algo = parse_algorithm(v); },
        [](const ExperimentConfig& c) { return std::string(to_string(c.algo)); }}},
      {"sampler",
       {[](ExperimentConfig& c, std::string_view, std::string_view v) { c.sampler = parse_sampler(v); },
        [](const ExperimentConfig& c) { return std::string(to_string(c.sampler)); }}},
      {"n_way", unsigned_field(&ExperimentConfig::n_way)},
      {"k_shot", unsigned_field(&ExperimentConfig::k_shot)},
      {"q_query", unsigned_field(&ExperimentConfig::q_query)},
      {"tasks_per_episode", unsigned_field(&ExperimentConfig::tasks_per_episode)},
      {"episodes_per_epoch", unsigned_field(&ExperimentConfig::episodes_per_epoch)},
      {"epochs", unsigned_field(&ExperimentConfig::epochs)},
      {"meta_batch", unsigned_field(&ExperimentConfig::meta_batch)},
      {"outer_lr", real_field(&ExperimentConfig::outer_lr)},
      {"init_inner_lr", real_field(&ExperimentConfig::init_inner_lr)},
      {"reptile_rate", real_field(&ExperimentConfig::reptile_rate)},
      {"adapter_hidden", unsigned_field(&ExperimentConfig::adapter_hidden)},
      {"blend_ratio", real_field(&ExperimentConfig::blend_ratio)},
      {"logit_scale", real_field(&ExperimentConfig::logit_scale)},
      {"inner_steps_train", unsigned_field(&ExperimentConfig::inner_steps_train)},
      {"inner_steps_test", unsigned_field(&ExperimentConfig::inner_steps_test)},
      {"seed", unsigned_field(&ExperimentConfig::seed)},
      {"eval_tasks", unsigned_field(&ExperimentConfig::eval_tasks)},
      {"eval_seed", unsigned_field(&ExperimentConfig::eval_seed)},
      {"out_dir", text_field(&ExperimentConfig::out_dir)},
  };
  return table;
}

const Field& field(std::string_view key) {
  for (const auto& [name, f] : fields()) {
    if (name == key) return f;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::string slurp_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void dump_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, f] : fields()) out.push_back(name);
    return out;
  }();
  return names;
}

void ExperimentConfig::set(std::string_view key, std::string_view value) {
  field(key).set(*this, key, trim(value));
}

std::string ExperimentConfig::get(std::string_view key) const { return field(key).get(*this); }

std::string ExperimentConfig::render() const {
  std::string out;
  for (const auto& [name, f] : fields()) out += name + " = " + f.get(*this) + "\n";
  return out;
}

std::string ExperimentConfig::render_echo() const {
  std::string out = std::string(kEchoBegin) + "\n";
  for (const auto& [name, f] : fields()) out += "# " + name + " = " + f.get(*this) + "\n";
  return out + std::string(kEchoEnd) + "\n";
}

void ExperimentConfig::apply_preset(std::string_view name) {
  if (name == "paper") {
    tasks_per_episode = 20;
    episodes_per_epoch = 50;
    epochs = 100;
    outer_lr = 1e-4;
    inner_steps_train = 1;
    inner_steps_test = 1;
    n_way = 3;
    k_shot = 5;
    q_query = 5;
  } else if (name == "desk") {
    const ExperimentConfig defaults;
    tasks_per_episode = defaults.tasks_per_episode;
    episodes_per_epoch = defaults.episodes_per_epoch;
    epochs = defaults.epochs;
    outer_lr = defaults.outer_lr;
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "' (expected paper|desk)");
  }
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t;
  t.algorithm = algo;
  t.sampler = sampler;
  t.shape = task_shape();
  t.tasks_per_episode = tasks_per_episode;
  t.episodes_per_epoch = episodes_per_epoch;
  t.epochs = epochs;
  t.meta_batch = meta_batch;
  t.outer_lr = outer_lr;
  t.init_inner_lr = init_inner_lr;
  t.reptile_rate = reptile_rate;
  t.inner_steps = inner_steps_train;
  t.seed = seed;
  t.validate();
  return t;
}

AdapterShape ExperimentConfig::adapter_shape(std::size_t dim) const {
  AdapterShape s{dim, adapter_hidden, blend_ratio, logit_scale};
  s.validate();
  return s;
}

ExperimentConfig parse_config(std::string_view text, ExperimentConfig base) {
  // An echoed block wins over the rest of the file.
  if (const auto begin = text.find(kEchoBegin); begin != std::string_view::npos) {
    const auto end = text.find(kEchoEnd, begin);
    if (end == std::string_view::npos) throw ConfigError("echoed config block has no end marker");
    std::string body;
    std::istringstream lines(std::string(text.substr(begin + kEchoBegin.size(), end - begin - kEchoBegin.size())));
    for (std::string line; std::getline(lines, line);) {
      std::string_view l = trim(line);
      if (l.starts_with("#")) l.remove_prefix(1);
      body += std::string(trim(l)) + "\n";
    }
    return parse_config(body, std::move(base));
  }
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string_view line = text.substr(pos, end - pos);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (!line.empty()) {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
      }
      base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    if (end == text.size()) break;
    pos = end + 1;
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  return parse_config(slurp_text(path), std::move(base));
}

Dataset make_dataset(const SyntheticSpec& spec, double test_fraction) {
  SyntheticData gen = generate(spec);
  Dataset d{std::move(gen.bank), std::move(gen.prototypes), {}};
  d.split = train_test_split(d.bank, test_fraction, spec.seed);
  return d;
}

Dataset load_dataset(const ExperimentConfig& config) {
  if (config.data_bank.empty()) return make_dataset(SyntheticSpec::desk(kDefaultDataSeed));
  if (config.data_labels.empty() || config.data_prototypes.empty()) {
    throw ConfigError("data_bank needs data_labels and data_prototypes");
  }
  Dataset d;
  d.prototypes = read_prototypes(config.data_prototypes);
  d.bank = read_bank(config.data_bank, config.data_labels, d.prototypes.count());
  // float32 storage loses unit norm; re-normalize through the identity encoder.
  d.bank.features = FrozenEncoder::identity().encode(d.bank.features);
  if (d.bank.dim() != d.prototypes.dim()) {
    throw DimensionError("bank dim " + std::to_string(d.bank.dim()) + " differs from prototype dim " +
                         std::to_string(d.prototypes.dim()));
  }
  const auto split_path = std::filesystem::path(config.data_labels).parent_path() / "split.csv";
  if (std::filesystem::exists(split_path)) {
    auto [train_rows, test_rows] = read_split(split_path);
    d.split = split_from_rows(d.bank, std::move(train_rows), std::move(test_rows));
  } else {
    d.split = train_test_split(d.bank, kDefaultTestFraction, 0);
  }
  return d;
}

std::string format_number(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", value);
  return buf;
}

void write_params(const std::filesystem::path& path, const MetaParams& params) {
  const std::size_t n = params.theta.size() + params.alpha.size();
  std::string bytes = "MPAR";
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((n >> (8 * i)) & 0xFF));
  auto put = [&bytes](double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  };
  for (double v : params.theta) put(v);
  for (double v : params.alpha) put(v);
  dump_text(path, bytes);
}

MetaParams read_params(const std::filesystem::path& path, std::size_t theta_length) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (bytes.size() < 4 || !std::equal(bytes.begin(), bytes.begin() + 4, "MPAR")) {
    throw ParseError("bad magic, expected MPAR", 0);
  }
  if (bytes.size() < 8) throw ParseError("truncated header", bytes.size());
  std::uint64_t n = 0;
  for (int i = 0; i < 4; ++i) n |= static_cast<std::uint64_t>(bytes[4 + i]) << (8 * i);
  if (bytes.size() - 8 != n * 8) {
    throw ParseError("payload: expected " + std::to_string(n * 8) + " bytes, found " +
                         std::to_string(bytes.size() - 8),
                     8 + std::min<std::uint64_t>(n * 8, bytes.size() - 8));
  }
  std::vector<double> values(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[8 + 8 * k + i]) << (8 * i);
    values[k] = std::bit_cast<double>(bits);
  }
  MetaParams p;
  if (n == theta_length + 1) {
    p.alpha = {values.back()};
  } else if (n == 2 * theta_length) {
    p.alpha.assign(values.begin() + static_cast<std::ptrdiff_t>(theta_length), values.end());
  } else {
    throw DimensionError("snapshot holds " + std::to_string(n) + " values; adapter has " +
                         std::to_string(theta_length) + " parameters");
  }
  p.theta.assign(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(theta_length));
  p.validate();
  return p;
}

std::string format_metrics(const ExperimentConfig& config, const MetricsLog& log) {
  std::string out = config.render_echo();
  out += "epoch,episode,task,inner_loss,outer_loss,mean_acc\n";
  for (const StepRecord& r : log.records) {
    out += std::to_string(r.epoch) + "," + std::to_string(r.episode) + "," + std::to_string(r.task) + "," +
           format_number(r.inner_loss) + "," + format_number(r.outer_loss) + "," +
           format_number(r.mean_accuracy) + "\n";
  }
  return out;
}

std::string format_memory_trace(const ExperimentConfig& config, const MetricsLog& log) {
  std::string out = config.render_echo();
  out += "epoch,episode,task,class,memory\n";
  for (const StepRecord& r : log.records) {
    for (std::size_t c = 0; c < r.memory.size(); ++c) {
      out += std::to_string(r.epoch) + "," + std::to_string(r.episode) + "," + std::to_string(r.task) + "," +
             std::to_string(c) + "," + format_number(r.memory[c]) + "\n";
    }
  }
  return out;
}

std::string format_summary(const ExperimentConfig& config, const MetaParams& params, const RunSummary& summary) {
  std::string out = config.render_echo();
  auto line = [&out](const std::string& key, const std::string& value) { out += key + " = " + value + "\n"; };
  line("overall_acc", format_number(summary.eval.overall_accuracy));
  line("min_class_acc", format_number(summary.eval.min_class_accuracy));
  line("worst3_acc", format_number(summary.eval.worst3_accuracy));
  line("mean_outer_loss", format_number(summary.eval.mean_outer_loss));
  line("final_train_acc", format_number(summary.final_train_accuracy));
  line("train_steps", std::to_string(summary.train_steps));
  line("theta_length", std::to_string(params.theta.size()));
  line("alpha_shape", params.per_parameter() ? "vector" : "scalar");
  line("alpha_length", std::to_string(params.alpha.size()));
  double alpha_mean = 0.0;
  for (double a : params.alpha) alpha_mean += a;
  line("alpha_mean", format_number(params.alpha.empty() ? 0.0 : alpha_mean / static_cast<double>(params.alpha.size())));
  for (const auto& [c, a] : summary.eval.per_class_accuracy) {
    line("class_acc." + std::to_string(c), format_number(a));
  }
  for (const auto& w : summary.warnings) line("warning", w);
  return out;
}

std::vector<Task> eval_fixture(const ExperimentConfig& config, const Dataset& data) {
  const TaskSampler sampler(data.split.test, config.task_shape());
  return make_eval_fixture(sampler, config.eval_tasks, config.eval_seed);
}

TrainOutcome train_and_evaluate(const ExperimentConfig& config, const Dataset& data,
                                const std::vector<Task>& fixture) {
  const TrainConfig tc = config.train_config();
  const AdapterObjective objective(config.adapter_shape(data.bank.dim()), data.prototypes);
  TrainOutcome out;
  out.train = train(tc, objective, data.split.train, initial_meta_params(tc, objective.shape()));
  out.summary.eval = evaluate(out.train.params, objective, fixture, config.inner_steps_test);
  out.summary.train_steps = out.train.log.records.size();
  out.summary.warnings = out.train.log.warnings;
  const std::size_t per_epoch = config.tasks_per_episode * config.episodes_per_epoch;
  const auto& records = out.train.log.records;
  if (per_epoch > 0 && records.size() >= per_epoch) {
    double sum = 0.0;
    for (std::size_t i = records.size() - per_epoch; i < records.size(); ++i) sum += records[i].mean_accuracy;
    out.summary.final_train_accuracy = sum / static_cast<double>(per_epoch);
  }
  return out;
}

TrainOutcome run_train(const ExperimentConfig& config) {
  const Dataset data = load_dataset(config);
  TrainOutcome out = train_and_evaluate(config, data, eval_fixture(config, data));
  const std::filesystem::path dir = config.out_dir;
  std::filesystem::create_directories(dir);
  dump_text(dir / "metrics.csv", format_metrics(config, out.train.log));
  dump_text(dir / "memory.csv", format_memory_trace(config, out.train.log));
  dump_text(dir / "summary.txt", format_summary(config, out.train.params, out.summary));
  write_params(dir / "params.mpar", out.train.params);
  return out;
}

RunSummary run_eval(const ExperimentConfig& config, const std::filesystem::path& params_path) {
  const Dataset data = load_dataset(config);
  const AdapterObjective objective(config.adapter_shape(data.bank.dim()), data.prototypes);
  const MetaParams params = read_params(params_path, objective.dimension());
  RunSummary s;
  s.eval = evaluate(params, objective, eval_fixture(config, data), config.inner_steps_test);
  dump_text(std::filesystem::path(config.out_dir) / "eval.txt", format_summary(config, params, s));
  return s;
}

std::string cell_name(Algorithm algo, SamplerKind sampler) {
  return std::string(to_string(algo)) + ":" + std::string(to_string(sampler));
}

std::pair<Algorithm, SamplerKind> parse_cell_name(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw ConfigError("configuration '" + std::string(text) + "' must look like algo:sampler");
  }
  return {parse_algorithm(text.substr(0, colon)), parse_sampler(text.substr(colon + 1))};
}

CompareReport compare(const ExperimentConfig& base, const std::vector<std::pair<Algorithm, SamplerKind>>& configs,
                      const std::vector<std::uint64_t>& seeds, std::size_t jobs) {
  const Dataset data = load_dataset(base);
  CompareReport report;
  report.fixture = eval_fixture(base, data);
  for (const auto& [algo, sampler] : configs) {
    for (std::uint64_t seed : seeds) report.cells.push_back({algo, sampler, seed, {}});
  }
  auto run_cell = [&](CompareCell& cell) {
    ExperimentConfig c = base;
    c.algo = cell.algo;
    c.sampler = cell.sampler;
    c.seed = cell.seed;
    cell.summary = train_and_evaluate(c, data, report.fixture).summary;
  };
  jobs = std::max<std::size_t>(jobs, 1);
  for (std::size_t start = 0; start < report.cells.size(); start += jobs) {
    std::vector<std::future<void>> wave;
    for (std::size_t i = start; i < std::min(start + jobs, report.cells.size()); ++i) {
      wave.push_back(std::async(jobs == 1 ? std::launch::deferred : std::launch::async, run_cell,
                                std::ref(report.cells[i])));
    }
    for (auto& f : wave) f.get();
  }
  return report;
}

std::string format_compare(const ExperimentConfig& base, const CompareReport& report) {
  std::string out = base.render_echo();
  out += "config,seed,overall_acc,min_class_acc,worst3_acc\n";
  std::vector<std::string> order;
  std::map<std::string, std::vector<const CompareCell*>> groups;
  for (const CompareCell& cell : report.cells) {
    const std::string name = cell_name(cell.algo, cell.sampler);
    if (groups[name].empty()) order.push_back(name);
    groups[name].push_back(&cell);
    out += name + "," + std::to_string(cell.seed) + "," + format_number(cell.summary.eval.overall_accuracy) + "," +
           format_number(cell.summary.eval.min_class_accuracy) + "," +
           format_number(cell.summary.eval.worst3_accuracy) + "\n";
  }
  for (const std::string& name : order) {
    double overall = 0.0;
    double min_class = 0.0;
    double worst3 = 0.0;
    for (const CompareCell* c : groups[name]) {
      overall += c->summary.eval.overall_accuracy;
      min_class += c->summary.eval.min_class_accuracy;
      worst3 += c->summary.eval.worst3_accuracy;
    }
    const double n = static_cast<double>(groups[name].size());
    out += name + ",mean," + format_number(overall / n) + "," + format_number(min_class / n) + "," +
           format_number(worst3 / n) + "\n";
  }
  return out;
}

CompareReport run_compare(const ExperimentConfig& base,
                          const std::vector<std::pair<Algorithm, SamplerKind>>& configs,
                          const std::vector<std::uint64_t>& seeds, std::size_t jobs) {
  CompareReport report = compare(base, configs, seeds, jobs);
  dump_text(std::filesystem::path(base.out_dir) / "compare.csv", format_compare(base, report));
  return report;
}

std::vector<SweepRow> sweep_steps(const ExperimentConfig& config, const Dataset& data, const MetaParams& params,
                                  const std::vector<std::size_t>& steps) {
  const AdapterObjective objective(config.adapter_shape(data.bank.dim()), data.prototypes);
  const auto fixture = eval_fixture(config, data);
  std::vector<SweepRow> rows;
  for (std::size_t n : steps) {
    const EvalSummary s = evaluate(params, objective, fixture, n);
    rows.push_back({n, s.overall_accuracy, s.min_class_accuracy});
  }
  return rows;
}

std::string format_sweep(const ExperimentConfig& config, const std::vector<SweepRow>& rows) {
  std::string out = config.render_echo();
  out += "steps,mean_acc,min_class_acc\n";
  for (const SweepRow& r : rows) {
    out += std::to_string(r.steps) + "," + format_number(r.mean_accuracy) + "," +
           format_number(r.min_class_accuracy) + "\n";
  }
  return out;
}

std::vector<SweepRow> run_sweep_steps(const ExperimentConfig& config, const std::filesystem::path& params_path,
                                      const std::vector<std::size_t>& steps) {
  const Dataset data = load_dataset(config);
  const std::size_t theta_length = config.adapter_shape(data.bank.dim()).parameter_count();
  const MetaParams params = read_params(params_path, theta_length);
  auto rows = sweep_steps(config, data, params, steps);
  dump_text(std::filesystem::path(config.out_dir) / "sweep.csv", format_sweep(config, rows));
  return rows;
}

GenDataFiles run_gen_data(const GenDataOptions& options) {
  const Dataset data = make_dataset(options.spec, options.test_fraction);
  std::filesystem::create_directories(options.out_dir);
  GenDataFiles files{options.out_dir / "bank.emb", options.out_dir / "labels.csv",
                     options.out_dir / "prototypes.emb", options.out_dir / "split.csv"};
  write_bank(files.bank, files.labels, data.bank);
  write_prototypes(files.prototypes, data.prototypes);
  write_split(files.split, data.split, data.bank.rows());
  return files;
}

}  // namespace metaepi
