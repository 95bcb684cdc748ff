#include "mmtta/run_io.hpp"

#include <array>
#include <iomanip>
#include <memory>
#include <sstream>

#include <openssl/evp.h>

#include "mmtta/errors.hpp"
#include "mmtta/formats.hpp"

namespace mmtta {

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw IoError("sha256: digest init failed");
  }
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  if (in.bad()) throw IoError("read failed on '" + path.string() + "'");
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return os.str();
}

Json RunManifest::to_json() const {
  return Json{{"version", version},
              {"seed", seed},
              {"input", {{"path", input_path}, {"sha256", input_sha256}}},
              {"config", config},
              {"outputs", outputs}};
}

RunManifest RunManifest::from_json(const Json& j) {
  try {
    RunManifest m;
    m.version = j.at("version").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.input_path = j.at("input").at("path").get<std::string>();
    m.input_sha256 = j.at("input").at("sha256").get<std::string>();
    m.config = j.at("config");
    m.outputs = j.at("outputs").get<std::vector<std::string>>();
    return m;
  } catch (const Json::exception& e) {
    throw ValidationError("manifest", e.what());
  }
}

void verify_input(const RunManifest& manifest, const std::filesystem::path& input) {
  const std::string actual = sha256_file(input);
  if (actual != manifest.input_sha256) {
    throw IoError("'" + input.string() + "' has sha256 " + actual + ", manifest records " +
                  manifest.input_sha256);
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed on '" + path.string() + "'");
}

Json batch_record(const BatchMetrics& m, bool trace_partition) {
  Json j{{"batch", m.batch},
         {"size", m.size},
         {"loss_ra", m.losses.ra},
         {"loss_bal", m.losses.bal},
         {"loss_c", m.losses.c},
         {"loss_g", m.losses.g},
         {"loss_total", m.losses.total},
         {"acc_fused", m.acc_fused()},
         {"acc_source", m.acc_source()},
         {"acc_gda", m.acc_gda()}};
  if (trace_partition) {
    j["n_m1"] = m.n_m1;
    j["n_m2"] = m.n_m2;
  }
  return j;
}

Json aggregates_json(const RunAggregates& a) {
  return Json{{"batches", a.batches},
              {"samples", a.samples},
              {"acc_source", a.acc_source},
              {"acc_gda", a.acc_gda},
              {"acc_fused", a.acc_fused},
              {"mean_loss_ra", a.mean_losses.ra},
              {"mean_loss_bal", a.mean_losses.bal},
              {"mean_loss_c", a.mean_losses.c},
              {"mean_loss_g", a.mean_losses.g},
              {"mean_loss_total", a.mean_losses.total},
              {"n_m1", a.n_m1},
              {"n_m2", a.n_m2}};
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path, bool trace_partition)
    : path_(path), out_(path), trace_(trace_partition) {
  if (!out_) throw IoError("cannot open '" + path.string() + "' for writing");
}

void MetricsWriter::write(const BatchMetrics& m) {
  out_ << batch_record(m, trace_).dump() << '\n';
  if (!out_) throw IoError("write failed on '" + path_.string() + "'");
}

void MetricsWriter::close() {
  out_.close();
  if (out_.fail()) throw IoError("write failed on '" + path_.string() + "'");
}

Json report_json(const RunReport& report, const RunManifest& manifest, bool trace_partition) {
  Json batches = Json::array();
  for (const BatchMetrics& m : report.batches) batches.push_back(batch_record(m, trace_partition));
  return Json{{"version", manifest.version},
              {"config", manifest.config},
              {"input", {{"path", manifest.input_path}, {"sha256", manifest.input_sha256}}},
              {"batches", batches},
              {"aggregates", aggregates_json(report.aggregates)},
              {"wall_clock_seconds", report.wall_seconds}};
}

RunManifest execute_run(const RunConfig& config, const std::filesystem::path& stream,
                        const std::filesystem::path& out_dir, const RunOptions& options) {
  config.adapt.validate();
  StreamReader reader(stream);
  const StreamHeader& h = reader.header();
  if (static_cast<int>(h.num_classes) != config.source.num_classes ||
      static_cast<Index>(h.raw_dim_m1) != config.source.raw_dim_m1 ||
      static_cast<Index>(h.raw_dim_m2) != config.source.raw_dim_m2) {
    throw ValidationError("source", "stream shape (C=" + std::to_string(h.num_classes) +
                                        ", d1=" + std::to_string(h.raw_dim_m1) +
                                        ", d2=" + std::to_string(h.raw_dim_m2) +
                                        ") differs from the source scenario");
  }

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());

  RunManifest manifest;
  manifest.config = to_json(config);
  manifest.input_path = std::filesystem::absolute(stream).lexically_normal().string();
  manifest.input_sha256 = sha256_file(stream);
  manifest.seed = config.adapt.seed;
  manifest.outputs = {"manifest.json", "metrics.jsonl", "report.json"};
  for (Perspective p : kAllPerspectives) {
    manifest.outputs.push_back("bank_" + std::string(to_string(p)) + ".gdabank");
  }
  if (options.dump_cov) {
    for (Perspective p : kAllPerspectives) {
      manifest.outputs.push_back("cov_" + std::string(to_string(p)) + ".gdacov");
      manifest.outputs.push_back("cov_" + std::string(to_string(p)) + ".txt");
    }
  }
  write_json_file(out_dir / "manifest.json", manifest.to_json());

  AdaptationState state = prepare_source_model(config.source, config.adapt);
  MetricsWriter metrics(out_dir / "metrics.jsonl", options.trace_partition);
  const RunReport report = run_stream(reader, std::move(state), config.adapt,
                                      [&](const BatchMetrics& m) { metrics.write(m); });
  metrics.close();
  write_json_file(out_dir / "report.json", report_json(report, manifest, options.trace_partition));

  for (Perspective p : kAllPerspectives) {
    const PerspectiveModel& model = report.final_state.models[static_cast<int>(p)];
    const std::string name(to_string(p));
    write_bank(out_dir / ("bank_" + name + ".gdabank"), model, config.adapt.eps_shrink);
    if (options.dump_cov) {
      const CovDump dump = make_cov_dump(model.bank);
      write_cov_dump(out_dir / ("cov_" + name + ".gdacov"), dump);
      write_cov_dump_text(out_dir / ("cov_" + name + ".txt"), dump);
    }
  }
  return manifest;
}

RunConfig config_from_manifest(const RunManifest& manifest) {
  return run_config_from_json(manifest.config);
}

std::vector<EvalRow> evaluate_reports(const std::vector<std::filesystem::path>& reports) {
  std::vector<EvalRow> rows;
  for (const auto& path : reports) {
    if (!std::filesystem::exists(path)) throw IoError("report not found: '" + path.string() + "'");
    Json j;
    try {
      j = read_json_file(path);
    } catch (const ValidationError& e) {
      throw IoError(e.what());
    }
    try {
      const Json& a = j.at("aggregates");
      EvalRow row;
      row.report = path.string();
      row.input_sha256 = j.at("input").at("sha256").get<std::string>();
      row.samples = a.at("samples").get<std::uint64_t>();
      row.acc_source = a.at("acc_source").get<double>();
      row.acc_gda = a.at("acc_gda").get<double>();
      row.acc_fused = a.at("acc_fused").get<double>();
      rows.push_back(std::move(row));
    } catch (const Json::exception& e) {
      throw IoError("'" + path.string() + "' is not a run report: " + e.what());
    }
  }
  for (EvalRow& row : rows) row.delta_fused = row.acc_fused - rows.front().acc_fused;
  return rows;
}

std::string format_eval_table(const std::vector<EvalRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(40) << "report" << std::right << std::setw(10) << "samples"
     << std::setw(12) << "source" << std::setw(12) << "gda" << std::setw(12) << "fused"
     << std::setw(12) << "delta" << '\n';
  os << std::fixed << std::setprecision(4);
  for (const EvalRow& r : rows) {
    os << std::left << std::setw(40) << r.report << std::right << std::setw(10) << r.samples
       << std::setw(12) << r.acc_source << std::setw(12) << r.acc_gda << std::setw(12)
       << r.acc_fused << std::setw(12) << std::showpos << r.delta_fused << std::noshowpos << '\n';
  }
  return os.str();
}

Json eval_json(const std::vector<EvalRow>& rows) {
  Json out = Json::array();
  for (const EvalRow& r : rows) {
    out.push_back({{"report", r.report},
                   {"input_sha256", r.input_sha256},
                   {"samples", r.samples},
                   {"acc_source", r.acc_source},
                   {"acc_gda", r.acc_gda},
                   {"acc_fused", r.acc_fused},
                   {"delta_fused", r.delta_fused}});
  }
  return out;
}

}  // namespace mmtta
