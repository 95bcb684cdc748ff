// mmtta: generate synthetic streams, run streaming adaptation, compare reports.
//
// Exit codes: 0 ok, 1 invalid config or arguments, 2 I/O failure or unreadable
// input data, 3 numerical failure.

#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "mmtta/errors.hpp"
#include "mmtta/formats.hpp"
#include "mmtta/run_io.hpp"

namespace {

using namespace mmtta;

enum Exit { kOk = 0, kConfig = 1, kIo = 2, kNumerical = 3 };

struct GenArgs {
  std::string spec;
  std::string out;
  std::string csv;
};

struct RunArgs {
  std::string config;
  std::string replay;
  std::string stream;
  std::string out;
  std::optional<Index> batch_size;
  std::optional<double> lambda, w_c, w_g, w_ra, w_bal, alpha, tau, eps_shrink, lr;
  std::optional<std::string> responsibilities, bal_sign, skl_posteriors;
  std::optional<std::uint64_t> seed;
  bool dump_cov = false;
  bool trace_partition = false;
};

struct EvalArgs {
  std::vector<std::string> reports;
  std::string json;
};

int cmd_gen(const GenArgs& a) {
  const ScenarioSpec spec = load_scenario(a.spec);
  const std::vector<Sample> samples = generate(spec);
  StreamHeader h{static_cast<std::uint32_t>(spec.num_classes),
                 static_cast<std::uint32_t>(spec.raw_dim_m1),
                 static_cast<std::uint32_t>(spec.raw_dim_m2), samples.size()};
  write_stream(a.out, h, samples);
  if (!a.csv.empty()) write_stream_csv(a.csv, samples);
  std::cout << "wrote " << samples.size() << " samples to " << a.out << '\n';
  return kOk;
}

void apply_overrides(const RunArgs& a, AdaptationConfig& c) {
  if (a.batch_size) c.batch_size = *a.batch_size;
  if (a.lambda) c.lambda = *a.lambda;
  if (a.w_c) c.w_c = *a.w_c;
  if (a.w_g) c.w_g = *a.w_g;
  if (a.w_ra) c.w_ra = *a.w_ra;
  if (a.w_bal) c.w_bal = *a.w_bal;
  if (a.alpha) c.alpha = *a.alpha;
  if (a.tau) c.tau = *a.tau;
  if (a.eps_shrink) c.eps_shrink = *a.eps_shrink;
  if (a.lr) c.lr = *a.lr;
  if (a.responsibilities) c.responsibility_source = responsibility_source_from_string(*a.responsibilities);
  if (a.bal_sign) c.bal_sign = bal_sign_from_string(*a.bal_sign);
  if (a.skl_posteriors) c.skl_posteriors = skl_posteriors_from_string(*a.skl_posteriors);
  if (a.seed) c.seed = *a.seed;
}

int cmd_run(const RunArgs& a) {
  RunConfig config;
  std::filesystem::path stream = a.stream;
  if (!a.replay.empty()) {
    const RunManifest manifest = RunManifest::from_json(read_json_file(a.replay));
    config = config_from_manifest(manifest);
    if (stream.empty()) stream = manifest.input_path;
    verify_input(manifest, stream);
  } else {
    if (a.config.empty()) throw ValidationError("--config", "required unless --replay is given");
    if (stream.empty()) throw ValidationError("--stream", "required unless --replay is given");
    config = load_run_config(a.config);
    apply_seed_env(config.adapt);
  }
  apply_overrides(a, config.adapt);
  config.adapt.validate();

  execute_run(config, stream, a.out, RunOptions{a.dump_cov, a.trace_partition});
  const Json report = read_json_file(std::filesystem::path(a.out) / "report.json");
  const Json& agg = report.at("aggregates");
  std::cout << "batches " << agg.at("batches") << "  samples " << agg.at("samples")
            << "  acc_source " << agg.at("acc_source").get<double>() << "  acc_fused "
            << agg.at("acc_fused").get<double>() << '\n';
  return kOk;
}

int cmd_eval(const EvalArgs& a) {
  std::vector<std::filesystem::path> paths(a.reports.begin(), a.reports.end());
  const std::vector<EvalRow> rows = evaluate_reports(paths);
  std::cout << format_eval_table(rows);
  if (!a.json.empty()) write_json_file(a.json, eval_json(rows));
  return kOk;
}

int cmd_dump_bank(const std::string& path) {
  std::cout << describe_bank(read_bank(path));
  return kOk;
}

template <typename F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const ValidationError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const ContractViolation& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const RejectedInput& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kIo;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what();
    if (e.class_index() >= 0) std::cerr << " (class " << e.class_index() << ")";
    std::cerr << '\n';
    return kNumerical;
  } catch (const RejectedBatch& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIo;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming Gaussian test-time adaptation on synthetic two-modality streams"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a feature stream from a scenario spec");
  g->add_option("--spec", gen.spec, "Scenario JSON")->required();
  g->add_option("--out", gen.out, "Output MMTTA1 stream")->required();
  g->add_option("--csv", gen.csv, "Also write a CSV export");

  RunArgs run;
  auto* r = app.add_subcommand("run", "Adapt over a stream and write metrics, report and banks");
  auto* cfg_opt = r->add_option("--config", run.config, "Run config JSON");
  r->add_option("--replay", run.replay, "Re-run the configuration recorded in a manifest.json")
      ->excludes(cfg_opt);
  r->add_option("--stream", run.stream, "Input MMTTA1 stream");
  r->add_option("--out", run.out, "Output directory")->required();
  r->add_option("--batch-size", run.batch_size);
  r->add_option("--lambda", run.lambda);
  r->add_option("--w-c", run.w_c);
  r->add_option("--w-g", run.w_g);
  r->add_option("--w-ra", run.w_ra);
  r->add_option("--w-bal", run.w_bal);
  r->add_option("--alpha", run.alpha);
  r->add_option("--tau", run.tau);
  r->add_option("--eps-shrink", run.eps_shrink);
  r->add_option("--lr", run.lr);
  r->add_option("--responsibilities", run.responsibilities, "source | fused");
  r->add_option("--bal-sign", run.bal_sign, "literal | flipped");
  r->add_option("--skl-posteriors", run.skl_posteriors, "gda | head");
  r->add_option("--seed", run.seed, "Overrides config and MMTTA_SEED");
  r->add_flag("--dump-cov", run.dump_cov, "Write GDACOV1 dumps per perspective");
  r->add_flag("--trace-partition", run.trace_partition, "Add n_m1/n_m2 to each metrics record");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Compare run reports");
  e->add_option("reports", eval.reports, "report.json files")->required();
  e->add_option("--json", eval.json, "Also write the table as JSON");

  std::string bank_path;
  auto* d = app.add_subcommand("dump-bank", "Print a GDABANK1 checkpoint");
  d->add_option("bank", bank_path, "Checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kConfig;
  }

  if (*g) return guarded([&] { return cmd_gen(gen); });
  if (*r) return guarded([&] { return cmd_run(run); });
  if (*e) return guarded([&] { return cmd_eval(eval); });
  if (*d) return guarded([&] { return cmd_dump_bank(bank_path); });
  return kConfig;
}
