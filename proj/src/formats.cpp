#include "mmtta/formats.hpp"

#include <bit>
#include <cstring>
#include <iomanip>
#include <sstream>

#include "mmtta/errors.hpp"

namespace mmtta {
namespace {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

constexpr char kStreamMagic[6] = {'M', 'M', 'T', 'T', 'A', '1'};
constexpr char kBankMagic[8] = {'G', 'D', 'A', 'B', 'A', 'N', 'K', '1'};
constexpr char kCovMagic[8] = {'G', 'D', 'A', 'C', 'O', 'V', '1', '\0'};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open '" + path.string() + "' for writing");
  }
  template <typename T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }
  void vector(const Vector& v) { bytes(reinterpret_cast<const char*>(v.data()), 8 * v.size()); }
  void matrix(const Matrix& m) {
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) pod(m(r, c));
  }
  void finish() {
    out_.flush();
    if (!out_) throw IoError("write failed on '" + path_.string() + "'");
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in, const std::filesystem::path& path) : in_(in), path_(path) {}

  template <typename T>
  T pod(const char* what) {
    T v;
    const auto at = in_.tellg();
    if (!in_.read(reinterpret_cast<char*>(&v), sizeof(T))) {
      throw IoError(path_.string() + ": truncated reading " + what + " at offset " +
                    std::to_string(static_cast<long long>(at)));
    }
    return v;
  }
  void magic(const char* expected, std::size_t n) {
    char buf[8] = {};
    if (!in_.read(buf, static_cast<std::streamsize>(n)) || std::memcmp(buf, expected, n) != 0) {
      throw IoError(path_.string() + ": bad magic at offset 0");
    }
  }
  Vector vector(Index n, const char* what) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = pod<double>(what);
    return v;
  }
  Matrix matrix(Index rows, Index cols, const char* what) {
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) m(r, c) = pod<double>(what);
    return m;
  }

 private:
  std::istream& in_;
  std::filesystem::path path_;
};

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return in;
}

}  // namespace

void write_stream(const std::filesystem::path& path, const StreamHeader& header,
                  std::span<const Sample> samples) {
  if (header.count != samples.size()) throw ContractViolation("write_stream: count mismatch");
  Writer w(path);
  w.bytes(kStreamMagic, sizeof(kStreamMagic));
  w.pod(header.num_classes);
  w.pod(header.raw_dim_m1);
  w.pod(header.raw_dim_m2);
  w.pod(header.count);
  for (const Sample& s : samples) {
    if (s.x_m1.size() != header.raw_dim_m1 || s.x_m2.size() != header.raw_dim_m2) {
      throw ContractViolation("write_stream: sample dimension differs from header");
    }
    w.pod(static_cast<std::int32_t>(s.label));
    w.vector(s.x_m1);
    w.vector(s.x_m2);
  }
  w.finish();
}

void write_stream_csv(const std::filesystem::path& path, std::span<const Sample> samples) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << std::setprecision(17);
  if (!samples.empty()) {
    out << "label";
    for (Index i = 0; i < samples.front().x_m1.size(); ++i) out << ",m1_" << i;
    for (Index i = 0; i < samples.front().x_m2.size(); ++i) out << ",m2_" << i;
    out << '\n';
  }
  for (const Sample& s : samples) {
    out << s.label;
    for (Index i = 0; i < s.x_m1.size(); ++i) out << ',' << s.x_m1[i];
    for (Index i = 0; i < s.x_m2.size(); ++i) out << ',' << s.x_m2[i];
    out << '\n';
  }
  if (!out) throw IoError("write failed on '" + path.string() + "'");
}

StreamReader::StreamReader(const std::filesystem::path& path)
    : path_(path), in_(open_input(path)) {
  Reader r(in_, path_);
  r.magic(kStreamMagic, sizeof(kStreamMagic));
  header_.num_classes = r.pod<std::uint32_t>("num_classes");
  header_.raw_dim_m1 = r.pod<std::uint32_t>("raw_dim_m1");
  header_.raw_dim_m2 = r.pod<std::uint32_t>("raw_dim_m2");
  header_.count = r.pod<std::uint64_t>("count");
  if (header_.num_classes == 0 || header_.raw_dim_m1 == 0 || header_.raw_dim_m2 == 0) {
    throw IoError(path_.string() + ": header has a zero dimension");
  }
  const std::uint64_t expected = kStreamHeaderBytes + header_.count * header_.record_bytes();
  const std::uint64_t actual = std::filesystem::file_size(path_);
  if (actual != expected) {
    throw IoError(path_.string() + ": file is " + std::to_string(actual) + " bytes, header implies " +
                  std::to_string(expected));
  }
}

std::optional<Sample> StreamReader::next() {
  if (read_ >= header_.count) return std::nullopt;
  Reader r(in_, path_);
  Sample s;
  s.label = r.pod<std::int32_t>("label");
  if (s.label < 0 || static_cast<std::uint32_t>(s.label) >= header_.num_classes) {
    throw IoError(path_.string() + ": record " + std::to_string(read_) + " has label " +
                  std::to_string(s.label) + " outside [0, C)");
  }
  s.x_m1 = r.vector(header_.raw_dim_m1, "x_m1");
  s.x_m2 = r.vector(header_.raw_dim_m2, "x_m2");
  ++read_;
  return s;
}

std::vector<Sample> read_stream(const std::filesystem::path& path, StreamHeader* header) {
  StreamReader reader(path);
  std::vector<Sample> out;
  out.reserve(reader.header().count);
  while (auto s = reader.next()) out.push_back(std::move(*s));
  if (header) *header = reader.header();
  return out;
}

void write_bank(const std::filesystem::path& path, const PerspectiveModel& model, double eps_shrink) {
  const PerspectiveBank& bank = model.bank;
  bank.validate();
  if (static_cast<Index>(model.ema.classes.size()) != bank.num_classes) {
    throw ContractViolation("write_bank: EMA state class count mismatch");
  }
  Writer w(path);
  w.bytes(kBankMagic, sizeof(kBankMagic));
  w.pod(static_cast<std::uint32_t>(bank.perspective));
  w.pod(static_cast<std::uint32_t>(bank.dim));
  w.pod(static_cast<std::uint32_t>(bank.num_classes));
  w.pod(std::uint32_t{0});
  w.pod(model.ema.alpha);
  w.pod(eps_shrink);
  for (const SufficientStats& s : bank.stats) {
    w.pod(s.count);
    w.vector(s.first_moment);
    w.matrix(s.second_moment);
  }
  for (const ClassGaussian& g : bank.params) {
    w.pod(g.prior);
    w.pod(g.log_prior);
    w.vector(g.mean);
    w.matrix(g.covariance);
  }
  for (const EmaClass& k : model.ema.classes) {
    w.pod(k.prior);
    w.vector(k.mean);
    w.matrix(k.covariance);
  }
  w.finish();
}

BankCheckpoint read_bank(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  Reader r(in, path);
  r.magic(kBankMagic, sizeof(kBankMagic));
  BankCheckpoint cp;
  PerspectiveBank& bank = cp.model.bank;
  const auto perspective = r.pod<std::uint32_t>("perspective");
  if (perspective > 2) throw IoError(path.string() + ": unknown perspective code");
  bank.perspective = static_cast<Perspective>(perspective);
  bank.dim = r.pod<std::uint32_t>("dim");
  bank.num_classes = r.pod<std::uint32_t>("num_classes");
  r.pod<std::uint32_t>("flags");
  cp.model.ema.alpha = r.pod<double>("alpha");
  cp.eps_shrink = r.pod<double>("eps_shrink");
  const Index d = bank.dim;
  for (Index c = 0; c < bank.num_classes; ++c) {
    SufficientStats s;
    s.count = r.pod<double>("count");
    s.first_moment = r.vector(d, "first_moment");
    s.second_moment = r.matrix(d, d, "second_moment");
    bank.stats.push_back(std::move(s));
  }
  for (Index c = 0; c < bank.num_classes; ++c) {
    const double prior = r.pod<double>("prior");
    const double log_prior = r.pod<double>("log_prior");
    Vector mean = r.vector(d, "mean");
    Matrix cov = r.matrix(d, d, "covariance");
    bank.params.push_back(
        ClassGaussian::make(prior, log_prior, std::move(mean), std::move(cov), static_cast<int>(c)));
  }
  for (Index c = 0; c < bank.num_classes; ++c) {
    EmaClass k;
    k.prior = r.pod<double>("ema prior");
    k.mean = r.vector(d, "ema mean");
    k.covariance = r.matrix(d, d, "ema covariance");
    cp.model.ema.classes.push_back(std::move(k));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw IoError(path.string() + ": trailing bytes after checkpoint");
  }
  bank.validate();
  return cp;
}

std::string describe_bank(const BankCheckpoint& cp) {
  const PerspectiveBank& bank = cp.model.bank;
  std::ostringstream os;
  os << std::setprecision(10);
  os << "perspective " << to_string(bank.perspective) << "  dim " << bank.dim << "  classes "
     << bank.num_classes << "  alpha " << cp.model.ema.alpha << "  eps_shrink " << cp.eps_shrink
     << '\n';
  for (Index c = 0; c < bank.num_classes; ++c) {
    const ClassGaussian& g = bank.params[c];
    os << "class " << c << "  count " << bank.stats[c].count << "  prior " << g.prior
       << "  log_prior " << g.log_prior << "  log_det " << g.log_det << '\n';
    os << "  mean";
    for (Index i = 0; i < g.mean.size(); ++i) os << ' ' << g.mean[i];
    os << "\n  cov diag";
    for (Index i = 0; i < g.covariance.rows(); ++i) os << ' ' << g.covariance(i, i);
    os << '\n';
  }
  return os.str();
}

CovDump make_cov_dump(const PerspectiveBank& bank) {
  CovDeviations dev = cov_deviations(bank);
  return CovDump{bank.perspective, std::move(dev.mean_covariance), std::move(dev.deviations)};
}

void write_cov_dump(const std::filesystem::path& path, const CovDump& dump) {
  Writer w(path);
  w.bytes(kCovMagic, sizeof(kCovMagic));
  w.pod(static_cast<std::uint32_t>(dump.mean_covariance.rows()));
  w.pod(static_cast<std::uint32_t>(dump.deviations.size()));
  w.pod(static_cast<std::uint32_t>(dump.perspective));
  w.pod(std::uint32_t{0});
  w.matrix(dump.mean_covariance);
  for (const Matrix& m : dump.deviations) w.matrix(m);
  w.finish();
}

CovDump read_cov_dump(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  Reader r(in, path);
  r.magic(kCovMagic, sizeof(kCovMagic));
  const auto d = r.pod<std::uint32_t>("dim");
  const auto classes = r.pod<std::uint32_t>("num_classes");
  const auto perspective = r.pod<std::uint32_t>("perspective");
  r.pod<std::uint32_t>("reserved");
  if (perspective > 2) throw IoError(path.string() + ": unknown perspective code");
  CovDump dump;
  dump.perspective = static_cast<Perspective>(perspective);
  dump.mean_covariance = r.matrix(d, d, "mean covariance");
  for (std::uint32_t c = 0; c < classes; ++c) dump.deviations.push_back(r.matrix(d, d, "deviation"));
  return dump;
}

void write_cov_dump_text(const std::filesystem::path& path, const CovDump& dump) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << std::setprecision(17);
  out << "# GDACOV1 perspective=" << to_string(dump.perspective)
      << " d=" << dump.mean_covariance.rows() << " C=" << dump.deviations.size() << '\n';
  auto block = [&](const std::string& title, const Matrix& m) {
    out << "# " << title << '\n';
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index c = 0; c < m.cols(); ++c) out << (c ? " " : "") << m(r, c);
      out << '\n';
    }
  };
  block("mean", dump.mean_covariance);
  for (std::size_t c = 0; c < dump.deviations.size(); ++c) {
    block("class " + std::to_string(c), dump.deviations[c]);
  }
  if (!out) throw IoError("write failed on '" + path.string() + "'");
}

}  // namespace mmtta
