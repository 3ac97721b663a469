#include "travproxy/checkpoint.hpp"

#include "travproxy/textio.hpp"

#include <fstream>
#include <sstream>

namespace travproxy {

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::Supervised: return "Supervised";
    case TrainMode::ProxyNoUnlabeled: return "ProxyNoUnlabeled";
    case TrainMode::ProxyNoReinit: return "ProxyNoReinit";
    case TrainMode::Full: return "Full";
  }
  return "?";
}

TrainMode parse_mode(const std::string& s) {
  for (TrainMode m : {TrainMode::Supervised, TrainMode::ProxyNoUnlabeled, TrainMode::ProxyNoReinit, TrainMode::Full})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown mode '" + s + "'");
}

namespace {

constexpr const char* kMagic = "travproxy-checkpoint";
constexpr int kVersion = 1;

template <typename Derived>
void write_tensor(std::ostream& out, std::string_view name, const Eigen::MatrixBase<Derived>& t) {
  out << "tensor " << name << ' ' << t.rows() << ' ' << t.cols() << '\n';
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    if (i) out << ' ';
    out << format_double(t.derived().data()[i]);
  }
  out << '\n';
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::vector<std::string_view> fields() {
    if (!std::getline(in_, line_)) throw DataError("checkpoint: unexpected end of file");
    ++lineno_;
    return split_ws(line_);
  }

  std::string keyed(std::string_view key) {
    auto f = fields();
    if (f.size() != 2 || f[0] != key) fail("expected '" + std::string(key) + " <value>'");
    return std::string(f[1]);
  }

  template <typename Derived>
  void tensor(std::string_view name, Eigen::PlainObjectBase<Derived>& t) {
    auto f = fields();
    if (f.size() != 4 || f[0] != "tensor" || f[1] != name) fail("expected tensor " + std::string(name));
    const long rows = std::stol(std::string(f[2])), cols = std::stol(std::string(f[3]));
    if (rows < 0 || cols < 0) fail("negative shape");
    if (Derived::ColsAtCompileTime == 1 && cols != 1) fail("vector tensor with cols != 1");
    t.resize(rows, cols);
    auto vals = fields();
    if (static_cast<long>(vals.size()) != rows * cols) fail("tensor value count mismatch");
    for (std::size_t i = 0; i < vals.size(); ++i) {
      auto v = parse_double(vals[i]);
      if (!v) fail("bad number in tensor " + std::string(name));
      t.data()[i] = *v;
    }
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw DataError("checkpoint line " + std::to_string(lineno_) + ": " + what);
  }

 private:
  std::istream& in_;
  std::string line_;
  std::size_t lineno_ = 0;
};

}  // namespace

void write_checkpoint(const Checkpoint& ck, std::ostream& out) {
  out << kMagic << ' ' << kVersion << '\n';
  out << "mode " << to_string(ck.mode) << '\n';
  out << "k_enc " << ck.model.k_enc << '\n';
  out << "dim " << ck.model.dim() << '\n';
  out << "temperature " << format_double(ck.bank.temperature) << '\n';
  write_tensor(out, "input.shift", ck.model.in_shift);
  write_tensor(out, "input.scale", ck.model.in_scale);
  ck.model.for_each_weight([&out](std::string_view name, const auto& p) { write_tensor(out, name, p); });
  write_tensor(out, "bank.negative", ck.bank.of(Class::Negative));
  write_tensor(out, "bank.positive", ck.bank.of(Class::Positive));
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  write_checkpoint(ck, out);
  if (!out) throw DataError("write failed for " + path.string());
}

Checkpoint read_checkpoint(std::istream& in) {
  Reader r(in);
  auto head = r.fields();
  if (head.size() != 2 || head[0] != kMagic) r.fail("not a travproxy checkpoint");
  if (head[1] != std::to_string(kVersion)) r.fail("unsupported checkpoint version");
  Checkpoint ck;
  ck.mode = parse_mode(r.keyed("mode"));
  ck.model.k_enc = std::stoi(r.keyed("k_enc"));
  const int dim = std::stoi(r.keyed("dim"));
  auto temp = parse_double(r.keyed("temperature"));
  if (!temp || !(*temp > 0)) r.fail("bad temperature");
  ck.bank.temperature = *temp;
  r.tensor("input.shift", ck.model.in_shift);
  r.tensor("input.scale", ck.model.in_scale);
  ck.model.for_each_weight([&r](std::string_view name, auto& p) { r.tensor(name, p); });
  r.tensor("bank.negative", ck.bank.of(Class::Negative));
  r.tensor("bank.positive", ck.bank.of(Class::Positive));
  if (ck.model.dim() != dim) r.fail("dim does not match trunk output");
  if (ck.bank.dim() != dim || ck.bank.of(Class::Positive).rows() != dim ||
      ck.bank.of(Class::Positive).cols() != ck.bank.of(Class::Negative).cols())
    r.fail("proxy bank shape mismatch");
  for (auto& m : ck.bank.membership) m.assign(static_cast<std::size_t>(ck.bank.K()), 0);
  if (!ck.model.all_finite()) r.fail("non-finite parameter");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace travproxy
