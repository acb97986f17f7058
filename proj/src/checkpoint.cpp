#include "sixmap/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "sixmap/common.hpp"
#include "sixmap/textio.hpp"

namespace sixmap::net {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

template <typename T>
void put(std::ostream& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.write(buf, sizeof(T));
}

class Reader {
 public:
  Reader(std::string data, std::string where) : data_(std::move(data)), where_(std::move(where)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) fail(ErrorCode::kMalformedInput, where_ + ": truncated checkpoint");
  }

  std::string data_;
  std::string where_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const std::filesystem::path& path, Model<float>& model) {
  std::ostringstream out(std::ios::binary);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const auto& cfg = model.config();
  put<double>(out, cfg.alpha);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.branch.out));
  put<double>(out, cfg.branch.dropout);
  put<double>(out, cfg.branch.bn_momentum);
  put<double>(out, cfg.branch.bn_eps);
  for (int c : {cfg.branch.c1, cfg.branch.c2, cfg.branch.c3, cfg.branch.c4, cfg.branch.fc1}) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(c));
  }
  auto params = model.params();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->shape.size()));
    for (int d : p->shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (float v : p->value) put<float>(out, v);
  }
  textio::write_file_atomic(path, out.str());
}

Model<float> read_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::kMissingInput, "missing checkpoint " + path.string());
  Reader in(textio::read_file(path), path.string());
  if (in.bytes(sizeof(kCheckpointMagic)) != std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    fail(ErrorCode::kMalformedInput, path.string() + ": not a model checkpoint");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    fail(ErrorCode::kMalformedInput, fmt::format("{}: unsupported checkpoint version {}", path.string(), version));
  }
  ModelConfig cfg;
  cfg.alpha = in.get<double>();
  cfg.branch.out = static_cast<int>(in.get<std::uint32_t>());
  cfg.branch.dropout = in.get<double>();
  cfg.branch.bn_momentum = in.get<double>();
  cfg.branch.bn_eps = in.get<double>();
  for (int* c : {&cfg.branch.c1, &cfg.branch.c2, &cfg.branch.c3, &cfg.branch.c4, &cfg.branch.fc1}) {
    *c = static_cast<int>(in.get<std::uint32_t>());
  }
  Model<float> model(cfg, 0);
  auto params = model.params();
  const auto count = in.get<std::uint32_t>();
  if (count != params.size()) {
    fail(ErrorCode::kMalformedInput,
         fmt::format("{}: {} tensors, expected {}", path.string(), count, params.size()));
  }
  for (auto* p : params) {
    const std::string name = in.bytes(in.get<std::uint32_t>());
    if (name != p->name) fail(ErrorCode::kMalformedInput, fmt::format("{}: tensor {} where {} expected", path.string(), name, p->name));
    const auto nd = in.get<std::uint32_t>();
    std::vector<int> shape(nd);
    for (auto& d : shape) d = static_cast<int>(in.get<std::uint32_t>());
    if (shape != p->shape) fail(ErrorCode::kMalformedInput, fmt::format("{}: shape mismatch for {}", path.string(), name));
    for (auto& v : p->value) v = in.get<float>();
  }
  if (!in.done()) fail(ErrorCode::kMalformedInput, path.string() + ": trailing bytes");
  return model;
}

void write_checkpoint_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::string text;
  for (const auto& [k, v] : manifest) text += fmt::format("{} = {}\n", k, v);
  textio::write_file_atomic(path, text);
}

Manifest read_checkpoint_manifest(const std::filesystem::path& path) {
  Manifest m;
  for (const auto& line : textio::read_lines(path)) {
    const auto eq = line.find(" = ");
    if (line.empty()) continue;
    if (eq == std::string::npos) fail(ErrorCode::kMalformedInput, path.string() + ": bad manifest line: " + line);
    m[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return m;
}

}  // namespace sixmap::net
