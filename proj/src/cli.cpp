#include "cgan/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "cgan/checkpoint.hpp"
#include "cgan/eval.hpp"
#include "json.hpp"

namespace cgan {

namespace {

namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Exclusive claim on a run directory for the life of the process.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw std::runtime_error("output directory " + dir.string() + " is in use (lock file " + path_.string() + ")");
    std::fclose(f);
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

struct Common {
  std::string config_file;
  std::vector<std::string> presets;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::optional<std::size_t> epochs, batch_size, disc_steps, rollouts, gan_iters;
  std::optional<double> lr, disc_lr;
  std::string regime;
};

void add_common(CLI::App* cmd, Common& c, bool training) {
  cmd->add_option("--config", c.config_file, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--preset", c.presets, "apply a named preset (repeatable)");
  cmd->add_option("--set", c.sets, "override one setting, key=value (repeatable)");
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--out", c.out_dir, "run directory");
  if (!training) return;
  cmd->add_option("--epochs", c.epochs, "epochs");
  cmd->add_option("--lr", c.lr, "generator learning rate");
  cmd->add_option("--disc-lr", c.disc_lr, "discriminator learning rate");
  cmd->add_option("--batch-size", c.batch_size, "batch size");
  cmd->add_option("--disc-steps", c.disc_steps, "discriminator steps per generator step");
  cmd->add_option("--regime", c.regime, "mle | creative_gan | gumbel_gan");
  cmd->add_option("--rollouts", c.rollouts, "Monte-Carlo rollouts per step (0 = terminal reward)");
  cmd->add_option("--gan-iters", c.gan_iters, "generator iterations per GAN epoch (0 = one pass)");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

RunConfig resolve(RunConfig base, const Common& c) {
  try {
    if (!c.config_file.empty()) apply_config_file(base, c.config_file);
    for (const auto& p : c.presets) apply_preset(base, p);
    for (const auto& s : c.sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      apply_setting(base, s.substr(0, eq), s.substr(eq + 1));
    }
    if (c.seed) apply_setting(base, "train.seed", std::to_string(*c.seed));
    if (c.epochs) apply_setting(base, "train.epochs", std::to_string(*c.epochs));
    if (c.lr) apply_setting(base, "train.learning_rate", fmt(*c.lr));
    if (c.disc_lr) apply_setting(base, "train.disc_learning_rate", fmt(*c.disc_lr));
    if (c.batch_size) apply_setting(base, "train.batch_size", std::to_string(*c.batch_size));
    if (c.disc_steps) apply_setting(base, "train.disc_steps_per_gen_step", std::to_string(*c.disc_steps));
    if (c.rollouts) apply_setting(base, "train.rollout_count", std::to_string(*c.rollouts));
    if (c.gan_iters) apply_setting(base, "train.gan_iters_per_epoch", std::to_string(*c.gan_iters));
    if (!c.regime.empty()) apply_setting(base, "train.regime", c.regime);
    base.train.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return base;
}

fs::path run_dir(const Common& c, const std::string& sub, const RunConfig& config) {
  if (!c.out_dir.empty()) return c.out_dir;
  const char* root = std::getenv(kOutputRootEnv);
  return fs::path(root && *root ? root : "runs") / (sub + "-seed" + std::to_string(config.train.seed));
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::vector<std::vector<std::string>> read_docs(const std::string& path) {
  std::vector<std::vector<std::string>> docs;
  for (const auto& text : split_documents_text(read_text_file(path))) {
    auto t = tokenize(text);
    if (!t.empty()) docs.push_back(std::move(t));
  }
  if (docs.empty()) throw UsageError(path + ": no documents");
  return docs;
}

std::vector<TokenIds> encode_docs(const Vocabulary& vocab, const std::vector<std::vector<std::string>>& docs) {
  std::vector<TokenIds> out;
  for (const auto& d : docs) out.push_back(vocab.encode(d));
  return out;
}

void validate_model(const GeneratorConfig& model) {
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

Checkpoint open_checkpoint(const std::string& path, std::initializer_list<Phase> accepted) {
  auto ckpt = load_checkpoint(fs::path(path));
  for (Phase p : accepted) {
    if (ckpt.phase == p) return ckpt;
  }
  throw UsageError(path + ": phase " + to_string(ckpt.phase) + " is not accepted by this subcommand");
}

std::string render_sample(const Vocabulary& vocab, const Trajectory& t) {
  TokenIds ids;
  for (int id : t.tokens) {
    if (id == Vocabulary::kEos) break;
    ids.push_back(id);
  }
  return vocab.detokenize(ids);
}

std::vector<std::string> draw_samples(const Generator& gen, const Vocabulary& vocab, std::size_t n,
                                      std::size_t max_len, double temperature, Rng& rng) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(render_sample(vocab, sample_sequence(gen, {Vocabulary::kBos}, max_len, temperature, rng)));
  }
  return out;
}

std::string join_samples(const std::vector<std::string>& samples) {
  std::string s;
  for (const auto& x : samples) s += x + "\n\n";
  return s;
}

// ---- subcommands ----

struct SplitArgs {
  std::vector<std::string> inputs;
  std::uint64_t seed = 0;
  std::string out_dir;
};

int run_split(const SplitArgs& a, std::ostream& out) {
  auto docs = ingest_files(std::vector<fs::path>(a.inputs.begin(), a.inputs.end()));
  Split<std::string> s;
  try {
    s = split_documents(std::move(docs), a.seed);
  } catch (const CorpusError& e) {
    throw UsageError(e.what());
  }
  const fs::path dir = a.out_dir.empty() ? fs::path(std::getenv(kOutputRootEnv) ? std::getenv(kOutputRootEnv) : "runs") /
                                               ("split-seed" + std::to_string(a.seed))
                                         : fs::path(a.out_dir);
  DirLock lock(dir);
  write_documents(dir / "train.txt", s.train);
  write_documents(dir / "valid.txt", s.valid);
  write_documents(dir / "test.txt", s.test);
  out << "split: " << s.train.size() << " train, " << s.valid.size() << " valid, " << s.test.size() << " test -> "
      << dir.string() << "\n";
  return 0;
}

struct MleArgs {
  Common common;
  std::string checkpoint;
  std::string train;
  std::string valid;
};

int run_mle(const MleArgs& a, bool finetune, std::ostream& out) {
  std::optional<Checkpoint> base;
  RunConfig config = default_config();
  if (finetune) {
    base = open_checkpoint(a.checkpoint, {Phase::pretrained, Phase::finetuned});
    config = base->config;
  }
  config = resolve(config, a.common);
  const auto train_docs = read_docs(a.train);
  const auto valid_docs = read_docs(a.valid);

  Vocabulary vocab;
  if (finetune) {
    if (!(config.model == base->config.model)) throw UsageError("model settings differ from the checkpoint's");
    vocab = base->vocab;
  } else {
    std::vector<std::string> all;
    for (const auto& d : train_docs) all.insert(all.end(), d.begin(), d.end());
    vocab = Vocabulary::build(all, config.min_freq, config.max_vocab);
    if (config.model.vocab_size != 0 && config.model.vocab_size != vocab.size()) {
      throw UsageError("model.vocab_size " + std::to_string(config.model.vocab_size) + " does not match the built vocabulary (" +
                       std::to_string(vocab.size()) + ")");
    }
    config.model.vocab_size = vocab.size();
  }
  validate_model(config.model);

  const auto dir = run_dir(a.common, finetune ? "finetune" : "pretrain", config);
  DirLock lock(dir);
  write_file(dir / "config.txt", echo_config(config));
  vocab.save(dir / "vocab.txt");
  std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
  MetricsLog log(&metrics);

  Rng rng(config.train.seed);
  Generator gen = finetune ? std::move(base->generator) : Generator(config.model, rng);
  auto opt = AdamState::for_params(gen.parameters(), config.train.learning_rate);
  const auto train = to_stream(encode_docs(vocab, train_docs));
  const auto valid = to_stream(encode_docs(vocab, valid_docs));
  const auto result = train_mle(gen, opt, train, valid, config.train, log, rng, finetune ? "finetune" : "pretrain");

  Checkpoint ckpt;
  ckpt.phase = finetune ? Phase::finetuned : Phase::pretrained;
  ckpt.config = config;
  ckpt.vocab = vocab;
  ckpt.generator = std::move(gen);
  ckpt.gen_opt = std::move(opt);
  ckpt.rng_state = rng.state();
  ckpt.metrics_cursor = log.size();
  save_checkpoint(ckpt, dir / "model.ckpt");
  out << (finetune ? "finetune" : "pretrain") << ": best valid perplexity " << result.best_valid_perplexity
      << " at epoch " << result.best_epoch << " -> " << (dir / "model.ckpt").string() << "\n";
  return 0;
}

struct GanArgs {
  Common common;
  std::string checkpoint;
  std::string train;
  std::string valid;
  std::size_t samples = 20;
};

int run_gan(const GanArgs& a, std::ostream& out) {
  auto base = open_checkpoint(a.checkpoint, {Phase::pretrained, Phase::finetuned, Phase::gan});
  RunConfig config = resolve(base.config, a.common);
  if (!(config.model == base.config.model)) throw UsageError("model settings differ from the checkpoint's");
  if (config.train.regime == Regime::mle) throw UsageError("gan-train needs --regime creative_gan or gumbel_gan");
  const auto train_docs = encode_docs(base.vocab, read_docs(a.train));
  const auto valid_docs = encode_docs(base.vocab, read_docs(a.valid));

  const auto dir = run_dir(a.common, "gan-train", config);
  DirLock lock(dir);
  write_file(dir / "config.txt", echo_config(config));
  base.vocab.save(dir / "vocab.txt");
  std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
  MetricsLog log(&metrics);

  Rng rng(config.train.seed);
  Generator gen = std::move(base.generator);
  const bool resume = base.phase == Phase::gan && base.discriminator.has_value();
  Discriminator disc = resume ? std::move(*base.discriminator)
                              : Discriminator::init_from_generator(gen, config.disc, rng, config.model);
  auto state = GanState::init(gen, disc, config.train);
  if (resume) {
    if (base.gen_opt) state.gen_opt = std::move(*base.gen_opt);
    if (base.disc_opt) state.disc_opt = std::move(*base.disc_opt);
    state.baseline = base.baseline;
    state.epoch = base.gan_epoch;
    state.gen_steps = base.gen_steps;
    state.start_perplexity = base.start_perplexity;
    state.best_perplexity = base.best_perplexity;
    if (!base.rng_state.empty()) rng.set_state(base.rng_state);
  }

  AdversarialData data;
  data.train_docs = real_sequences(train_docs, config.model.bptt_len);
  data.train_stream = to_stream(train_docs);
  data.valid_stream = to_stream(valid_docs);

  auto save = [&](const fs::path& path, const Generator& g, const Discriminator& d, const GanState& s) {
    Checkpoint c;
    c.phase = Phase::gan;
    c.config = config;
    c.vocab = base.vocab;
    c.generator = g.clone();
    c.discriminator = d.clone();
    c.gen_opt = s.gen_opt;
    c.disc_opt = s.disc_opt;
    c.rng_state = rng.state();
    c.metrics_cursor = log.size();
    c.baseline = s.baseline;
    c.gan_epoch = s.epoch;
    c.gen_steps = s.gen_steps;
    c.start_perplexity = s.start_perplexity;
    c.best_perplexity = s.best_perplexity;
    save_checkpoint(c, path);
  };
  // best.ckpt: lowest valid perplexity among this run's epochs.
  std::optional<double> best_seen;
  const auto result = adversarial_train(
      gen, disc, data, config.train, state, log, rng,
      [&](std::size_t epoch, const Generator& g, const Discriminator& d, const GanState& s) {
        save(dir / ("epoch-" + std::to_string(epoch) + ".ckpt"), g, d, s);
        const double ppl = log.records().back().perplexity.value();
        if (!best_seen || ppl < *best_seen) {
          best_seen = ppl;
          save(dir / "best.ckpt", g, d, s);
        }
      });
  save(dir / "model.ckpt", gen, disc, state);

  Rng sample_rng = rng.derive(0);
  write_file(dir / "samples.txt", join_samples(draw_samples(gen, base.vocab, a.samples, config.model.bptt_len,
                                                             config.train.sample_temperature, sample_rng)));
  out << "gan-train (" << to_string(config.train.regime) << "): schedule " << result.schedule.size()
      << " steps, start perplexity " << result.start_perplexity << ", final "
      << (result.valid_perplexity.empty() ? result.start_perplexity : result.valid_perplexity.back())
      << (result.diverged ? " (diverged; best restored)" : "") << " -> " << dir.string() << "\n";
  return 0;
}

struct GenerateArgs {
  std::string checkpoint;
  std::size_t num = 10;
  std::uint64_t seed = 0;
  std::optional<std::size_t> max_len;
  double temperature = 1.0;
  std::string out_dir;
};

int run_generate(const GenerateArgs& a, std::ostream& out) {
  const auto ckpt = open_checkpoint(a.checkpoint, {Phase::pretrained, Phase::finetuned, Phase::gan});
  if (a.temperature < 0) throw UsageError("--temperature must be >= 0");
  Rng rng(a.seed);
  const auto text = join_samples(draw_samples(ckpt.generator, ckpt.vocab, a.num,
                                              a.max_len.value_or(ckpt.config.model.bptt_len), a.temperature, rng));
  out << text;
  if (!a.out_dir.empty()) {
    DirLock lock(a.out_dir);
    write_file(fs::path(a.out_dir) / "samples.txt", text);
  }
  return 0;
}

struct EvalArgs {
  std::vector<std::string> checkpoints;
  std::string test;
  std::string dataset_id;
  std::size_t samples = 100;
  std::uint64_t seed = 0;
  std::size_t max_len = 30;
  bool exclude_unk = false;
  std::string out_dir;
};

int run_eval(const EvalArgs& a, std::ostream& out) {
  std::vector<Checkpoint> ckpts;
  for (const auto& p : a.checkpoints) ckpts.push_back(open_checkpoint(p, {Phase::pretrained, Phase::finetuned, Phase::gan}));
  const auto docs = read_docs(a.test);
  const auto stream = to_stream(encode_docs(ckpts.front().vocab, docs));
  std::vector<ModelEntry> models;
  std::map<std::string, int> seen;
  for (std::size_t i = 0; i < ckpts.size(); ++i) {
    std::string id = fs::path(a.checkpoints[i]).parent_path().filename().string();
    id = (id.empty() ? "" : id + "/") + fs::path(a.checkpoints[i]).stem().string();
    if (seen[id]++) id += "#" + std::to_string(seen[id]);
    models.push_back({id, &ckpts[i].generator, &ckpts[i].vocab});
  }
  const auto dataset = a.dataset_id.empty() ? fs::path(a.test).stem().string() : a.dataset_id;
  std::vector<EvalReport> rows;
  try {
    rows = compare_report(models, stream, dataset, {a.samples, a.max_len, 1.0, a.seed}, {0, !a.exclude_unk});
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto table = format_report_table(rows);
  out << table;
  if (!a.out_dir.empty()) {
    DirLock lock(a.out_dir);
    std::ofstream jsonl(fs::path(a.out_dir) / "report.jsonl", std::ios::binary | std::ios::trunc);
    write_report_jsonl(jsonl, rows);
    write_file(fs::path(a.out_dir) / "report.txt", table);
  }
  return 0;
}

void error_line(std::ostream& err, const char* kind, int code, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["exit_code"] = code;
  j["message"] = message;
  err << j.dump() << "\n";
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"cgan: desk-scale creative text GAN pipeline"};
  app.require_subcommand(1, 1);

  SplitArgs split;
  auto* split_cmd = app.add_subcommand("split", "split documents into train/valid/test (80/10/10)");
  split_cmd->add_option("--input", split.inputs, "text files; documents are separated by blank lines")
      ->required()
      ->check(CLI::ExistingFile);
  split_cmd->add_option("--seed", split.seed, "shuffle seed");
  split_cmd->add_option("--out", split.out_dir, "output directory");

  MleArgs pre, fine;
  auto* pre_cmd = app.add_subcommand("pretrain", "train a language model from scratch");
  auto* fine_cmd = app.add_subcommand("finetune", "continue LM training from a checkpoint on new data");
  for (auto [cmd, args] : {std::pair{pre_cmd, &pre}, std::pair{fine_cmd, &fine}}) {
    add_common(cmd, args->common, true);
    cmd->add_option("--train", args->train, "training text")->required()->check(CLI::ExistingFile);
    cmd->add_option("--valid", args->valid, "validation text")->required()->check(CLI::ExistingFile);
  }
  fine_cmd->add_option("--checkpoint", fine.checkpoint, "pretrained checkpoint")->required()->check(CLI::ExistingFile);

  GanArgs gan;
  auto* gan_cmd = app.add_subcommand("gan-train", "adversarial training from a fine-tuned checkpoint");
  add_common(gan_cmd, gan.common, true);
  gan_cmd->add_option("--checkpoint", gan.checkpoint, "fine-tuned (or gan, to resume) checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  gan_cmd->add_option("--train", gan.train, "training text")->required()->check(CLI::ExistingFile);
  gan_cmd->add_option("--valid", gan.valid, "validation text")->required()->check(CLI::ExistingFile);
  gan_cmd->add_option("--samples", gan.samples, "samples written after training");

  GenerateArgs gen;
  auto* gen_cmd = app.add_subcommand("generate", "sample text from a checkpoint");
  gen_cmd->add_option("--checkpoint", gen.checkpoint, "checkpoint")->required()->check(CLI::ExistingFile);
  gen_cmd->add_option("--num", gen.num, "number of samples");
  gen_cmd->add_option("--seed", gen.seed, "sampling seed");
  gen_cmd->add_option("--max-len", gen.max_len, "tokens per sample (default bptt_len)");
  gen_cmd->add_option("--temperature", gen.temperature, "softmax temperature (0 = greedy)");
  gen_cmd->add_option("--out", gen.out_dir, "also write samples.txt here");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "perplexity and distinct-n report across checkpoints");
  eval_cmd->add_option("--checkpoints", ev.checkpoints, "comma-separated checkpoints")
      ->required()
      ->delimiter(',')
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--test", ev.test, "test text")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--dataset-id", ev.dataset_id, "dataset label (default: test file stem)");
  eval_cmd->add_option("--samples", ev.samples, "samples per model for distinct-n");
  eval_cmd->add_option("--seed", ev.seed, "sampling seed");
  eval_cmd->add_option("--max-len", ev.max_len, "tokens per sample");
  eval_cmd->add_flag("--exclude-unk", ev.exclude_unk, "skip <unk> targets in perplexity");
  eval_cmd->add_option("--out", ev.out_dir, "write report.jsonl and report.txt here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    error_line(err, "usage", 2, e.what());
    return 2;
  }

  try {
    if (split_cmd->parsed()) return run_split(split, out);
    if (pre_cmd->parsed()) return run_mle(pre, false, out);
    if (fine_cmd->parsed()) return run_mle(fine, true, out);
    if (gan_cmd->parsed()) return run_gan(gan, out);
    if (gen_cmd->parsed()) return run_generate(gen, out);
    if (eval_cmd->parsed()) return run_eval(ev, out);
  } catch (const UsageError& e) {
    error_line(err, "usage", 2, e.what());
    return 2;
  } catch (const std::exception& e) {
    error_line(err, "runtime", 1, e.what());
    return 1;
  }
  error_line(err, "usage", 2, "no subcommand");
  return 2;
}

}  // namespace cgan
