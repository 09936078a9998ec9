#include "amcn/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "amcn/config.hpp"
#include "amcn/errors.hpp"
#include "amcn/gradcheck.hpp"
#include "amcn/metrics.hpp"
#include "binary_io.hpp"

namespace amcn {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::optional<std::uint32_t> shots;
  std::string polarity;
  double tol = 1e-4;
  std::string frozen = "true";
  std::string train, test_id, test_ood, model, input;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "undefined"; }

RunConfig effective_config(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.shots) cfg.train.shots = *o.shots;
  if (!o.polarity.empty()) cfg.train.polarity = parse_polarity(o.polarity);
  cfg.train.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) { detail::write_file_atomic(path, text); }

int cmd_synth(const Options& o, std::ostream& out) {
  RunConfig cfg = effective_config(o);
  if (o.seed) cfg.synth.seed = *o.seed;
  const auto data = synth_generate(cfg.synth);
  fs::create_directories(o.out);
  write_embeddings(data.train.to_file(true), fs::path(o.out) / "train.emb");
  write_embeddings(data.test_id.to_file(true), fs::path(o.out) / "test_id.emb");
  write_embeddings(data.test_ood.to_file(false), fs::path(o.out) / "test_ood.emb");
  out << "wrote " << data.train.rows.size() << " train, " << data.test_id.rows.size() << " test-id and "
      << data.test_ood.rows.size() << " test-ood rows to " << o.out << "\n";
  return 0;
}

int cmd_train(const Options& o, std::ostream& out) {
  RunConfig cfg = effective_config(o);
  if (o.seed) cfg.train.seed = *o.seed;
  const auto data = labeled_set(load_embeddings(o.train, true));
  fs::create_directories(o.out);
  const auto result = train(data, cfg.train, {}, fs::path(o.out));
  write_bank(fs::path(o.out) / "bank.bin", result.bank, result.enc);
  write_stats(fs::path(o.out) / "stats.bin", result.stats);
  RunReport report;
  report.config_hash = config_hash(cfg);
  report.epochs = result.epochs;
  report.per_class_stats = result.stats;
  write_text(fs::path(o.out) / "train_report.json", to_json(report));
  out << "trained " << result.epochs.size() << " epochs (" << result.optimizer_steps << " steps)";
  if (!result.epochs.empty()) {
    out << ", loss " << fmt(result.epochs.front().total) << " -> " << fmt(result.epochs.back().total);
  }
  out << "\n";
  return 0;
}

struct Model {
  PromptBank bank;
  DeskEncoder enc;
  std::vector<ClassStats> stats;
};

Model load_model(const std::string& dir) {
  Model m;
  std::tie(m.bank, m.enc) = read_bank(fs::path(dir) / "bank.bin");
  m.stats = read_stats(fs::path(dir) / "stats.bin");
  if (m.stats.size() != m.bank.C) throw MissingStats("stats file does not match the bank's class count");
  return m;
}

int cmd_eval(const Options& o, std::ostream& out) {
  RunConfig cfg = effective_config(o);
  const Model model = load_model(o.model);
  const auto id = labeled_set(load_embeddings(o.test_id, true), model.bank.C);
  const auto ood = unit_rows(load_embeddings(o.test_ood, false));
  const auto metrics = evaluate(model.bank, model.enc, model.stats, id, ood, cfg.train, o.frozen == "true");

  RunReport report;
  const fs::path train_report = fs::path(o.model) / "train_report.json";
  if (fs::exists(train_report)) {
    report = parse_run_report(detail::read_file(train_report));
  }
  report.config_hash = config_hash(cfg);
  report.metrics = metrics;
  report.per_class_stats = model.stats;
  fs::create_directories(o.out);
  write_text(fs::path(o.out) / "report.json", to_json(report));
  out << "auroc " << fmt(metrics.auroc) << "\nfpr95 " << fmt(metrics.fpr95) << "\nid_accuracy "
      << fmt(metrics.id_accuracy) << "\n";
  return 0;
}

int cmd_detect(const Options& o, std::ostream& out) {
  RunConfig cfg = effective_config(o);
  Model model = load_model(o.model);
  const auto rows = unit_rows(load_embeddings(o.input, false));
  const auto enc = encode_bank(model.bank, model.enc);
  const bool frozen = o.frozen == "true";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto d = detect(rows[i], enc, model.stats, cfg.train.hp, cfg.train.polarity, frozen);
    out << i << '\t' << fmt(d.score) << '\t' << (d.is_ood ? 1 : 0) << '\t'
        << (d.predicted_class ? static_cast<long long>(*d.predicted_class) : -1LL) << '\n';
  }
  return 0;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
  RunConfig cfg = effective_config(o);
  const auto p = random_grad_problem(o.seed.value_or(1), cfg.train.hp);
  const auto r = grad_check(p.batch, p.bank, p.enc, p.hp, 1e-5);
  out << "max_rel_error " << fmt(r.max_rel_error) << "\nmean_rel_error " << fmt(r.mean_rel_error) << "\n";
  if (r.max_rel_error > o.tol) {
    out << "FAIL: max relative error above tolerance " << fmt(o.tol) << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot OOD detection with learnable ID/OOD prompts"};
  app.require_subcommand(1, 1);
  Options o;

  auto add_config = [&](CLI::App* sub) { sub->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile); };
  auto add_seed = [&](CLI::App* sub) { sub->add_option("--seed", o.seed, "seed override"); };
  auto add_out = [&](CLI::App* sub) { sub->add_option("--out", o.out, "output directory"); };
  auto add_polarity = [&](CLI::App* sub) {
    sub->add_option("--polarity", o.polarity, "detection polarity")->check(CLI::IsMember({"literal", "flipped"}));
  };
  auto add_frozen = [&](CLI::App* sub) {
    sub->add_option("--frozen", o.frozen, "keep class statistics fixed")->check(CLI::IsMember({"true", "false"}));
  };
  auto add_model = [&](CLI::App* sub) {
    sub->add_option("--model", o.model, "directory holding bank.bin and stats.bin")
        ->required()
        ->check(CLI::ExistingDirectory);
  };

  auto* synth = app.add_subcommand("synth", "generate synthetic embedding files");
  add_config(synth);
  add_seed(synth);
  add_out(synth);

  auto* trn = app.add_subcommand("train", "train a prompt bank and fit class statistics");
  add_config(trn);
  add_seed(trn);
  add_out(trn);
  add_polarity(trn);
  trn->add_option("--shots", o.shots, "shots per class");
  trn->add_option("--train", o.train, "labeled training embeddings")->required()->check(CLI::ExistingFile);

  auto* ev = app.add_subcommand("eval", "score held-out ID and OOD sets");
  add_config(ev);
  add_out(ev);
  add_polarity(ev);
  add_frozen(ev);
  add_model(ev);
  ev->add_option("--test-id", o.test_id, "labeled ID embeddings")->required()->check(CLI::ExistingFile);
  ev->add_option("--test-ood", o.test_ood, "OOD embeddings")->required()->check(CLI::ExistingFile);

  auto* det = app.add_subcommand("detect", "score one embedding file row by row");
  add_config(det);
  add_polarity(det);
  add_frozen(det);
  add_model(det);
  det->add_option("--input", o.input, "embeddings to score")->required()->check(CLI::ExistingFile);

  auto* gc = app.add_subcommand("gradcheck", "compare analytic and numeric gradients");
  add_config(gc);
  add_seed(gc);
  gc->add_option("--tol", o.tol, "maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*synth) return cmd_synth(o, out);
    if (*trn) return cmd_train(o, out);
    if (*ev) return cmd_eval(o, out);
    if (*det) return cmd_detect(o, out);
    if (*gc) return cmd_gradcheck(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace amcn
