// SPDX-License-Identifier: Apache-2.0
#include "segbert/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "segbert/error.hpp"

namespace segbert {

namespace {

constexpr std::array<char, 8> kMagic = {'S', 'G', 'B', 'C', 'K', 'P', 'T', '1'};

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

void put_u64(std::ostream& out, std::uint64_t v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t get_u64(std::istream& in, const std::filesystem::path& path) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw Error("truncated checkpoint " + path.string());
  return to_little(v);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  const auto list = params.parameters();
  out.write(kMagic.data(), kMagic.size());
  put_u64(out, list.size());
  for (const Parameter* p : list) {
    put_u64(out, p->name.size());
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put_u64(out, static_cast<std::uint64_t>(p->value.rows()));
    put_u64(out, static_cast<std::uint64_t>(p->value.cols()));
    for (Index i = 0; i < p->value.size(); ++i) {
      const double d = to_little(p->value.data()[i]);
      out.write(reinterpret_cast<const char*>(&d), sizeof d);
    }
  }
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, ModelParams& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw Error("not a checkpoint file: " + path.string());

  std::map<std::string, Parameter*> by_name;
  for (Parameter* p : params.parameters()) by_name.emplace(p->name, p);

  const std::uint64_t count = get_u64(in, path);
  if (count != by_name.size()) {
    throw Error("checkpoint holds " + std::to_string(count) + " tensors, model expects " + std::to_string(by_name.size()));
  }
  for (std::uint64_t t = 0; t < count; ++t) {
    const std::uint64_t len = get_u64(in, path);
    if (len > 4096) throw Error("corrupt tensor name in " + path.string());
    std::string name(len, '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(len))) throw Error("truncated checkpoint " + path.string());
    const auto rows = static_cast<Index>(get_u64(in, path));
    const auto cols = static_cast<Index>(get_u64(in, path));
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error("checkpoint tensor '" + name + "' is not a model parameter");
    Parameter& p = *it->second;
    if (rows != p.value.rows() || cols != p.value.cols()) {
      throw ShapeError("checkpoint tensor '" + name + "' has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                       ", model expects " + std::to_string(p.value.rows()) + "x" + std::to_string(p.value.cols()));
    }
    for (Index i = 0; i < p.value.size(); ++i) {
      double d = 0.0;
      if (!in.read(reinterpret_cast<char*>(&d), sizeof d)) throw Error("truncated checkpoint " + path.string());
      p.value.data()[i] = to_little(d);
    }
    p.zero_grad();
  }
}

}  // namespace segbert
