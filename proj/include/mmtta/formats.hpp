#pragma once

// Binary file formats. All integers and doubles are little-endian; matrices
// are written row-major. See docs/formats.md for the byte layouts.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>

#include "mmtta/adaptation_engine.hpp"

namespace mmtta {

// ---- feature stream (MMTTA1) ----

struct StreamHeader {
  std::uint32_t num_classes = 0;
  std::uint32_t raw_dim_m1 = 0;
  std::uint32_t raw_dim_m2 = 0;
  std::uint64_t count = 0;

  std::uint64_t record_bytes() const { return 4 + 8ull * (raw_dim_m1 + raw_dim_m2); }
};

inline constexpr std::uint64_t kStreamHeaderBytes = 6 + 4 + 4 + 4 + 8;

void write_stream(const std::filesystem::path& path, const StreamHeader& header,
                  std::span<const Sample> samples);
void write_stream_csv(const std::filesystem::path& path, std::span<const Sample> samples);

/// Sequential reader; every record is read exactly once.
class StreamReader : public SampleSource {
 public:
  explicit StreamReader(const std::filesystem::path& path);

  const StreamHeader& header() const { return header_; }
  std::optional<Sample> next() override;
  std::uint64_t samples_read() const override { return read_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  StreamHeader header_;
  std::uint64_t read_ = 0;
};

std::vector<Sample> read_stream(const std::filesystem::path& path, StreamHeader* header = nullptr);

// ---- bank checkpoint (GDABANK1) ----

struct BankCheckpoint {
  PerspectiveModel model;
  double eps_shrink = kDefaultShrinkage;
};

void write_bank(const std::filesystem::path& path, const PerspectiveModel& model, double eps_shrink);
BankCheckpoint read_bank(const std::filesystem::path& path);
/// Human-readable listing for `mmtta dump-bank`.
std::string describe_bank(const BankCheckpoint& checkpoint);

// ---- covariance deviations (GDACOV1) ----

struct CovDump {
  Perspective perspective = Perspective::Fused;
  Matrix mean_covariance;
  std::vector<Matrix> deviations;
};

CovDump make_cov_dump(const PerspectiveBank& bank);
void write_cov_dump(const std::filesystem::path& path, const CovDump& dump);
CovDump read_cov_dump(const std::filesystem::path& path);
/// Plain-text variant: one "# mean" / "# class c" block per matrix, rows space separated.
void write_cov_dump_text(const std::filesystem::path& path, const CovDump& dump);

}  // namespace mmtta
