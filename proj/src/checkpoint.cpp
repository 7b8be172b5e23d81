// Copyright 2026 The MBL Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mbl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "mbl/rng.hpp"

namespace mbl {
namespace {

constexpr char kMagic[4] = {'M', 'B', 'L', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  std::uint64_t u64() { return read_le(8); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(read_le(4)); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::uint64_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  [[noreturn]] void fail(const std::string& what) const {
    throw CheckpointError(source_ + ": " + what + " (offset " + std::to_string(pos_) + ")");
  }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) fail("truncated checkpoint");
  }
  std::uint64_t read_le(int n) {
    need(static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

struct Entry {
  Shape shape;
  std::uint64_t offset = 0;
};

std::string canonical_json(const ModelConfig& config) { return to_json(config).dump(); }

}  // namespace

std::uint64_t config_digest(const ModelConfig& config) {
  return fnv1a(std::string(kModelCodeVersion) + "\n" + canonical_json(config));
}

std::string encode_checkpoint(const SedModel& model) {
  std::string out(kMagic, 4);
  put_u64(out, config_digest(model.config()));
  const std::string version = kModelCodeVersion;
  put_u32(out, static_cast<std::uint32_t>(version.size()));
  out += version;
  const std::string json = canonical_json(model.config());
  put_u64(out, json.size());
  out += json;

  std::vector<std::pair<std::string, std::span<const double>>> blobs;
  std::vector<Shape> shapes;
  for (const auto& p : model.parameters()) {
    blobs.emplace_back(p.name, p.tensor.data());
    shapes.push_back(p.tensor.shape());
  }
  for (const auto& [name, buf] : model.buffers()) {
    blobs.emplace_back(name, std::span<const double>(*buf));
    shapes.push_back({buf->size()});
  }
  put_u64(out, blobs.size());
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    put_u32(out, static_cast<std::uint32_t>(blobs[i].first.size()));
    out += blobs[i].first;
    put_u32(out, static_cast<std::uint32_t>(shapes[i].size()));
    for (std::size_t d : shapes[i]) put_u64(out, d);
    put_u64(out, offset);
    offset += blobs[i].second.size();
  }
  for (const auto& [name, values] : blobs)
    for (double v : values) put_f64(out, v);
  return out;
}

SedModel decode_checkpoint(const std::string& bytes, const std::string& source) {
  Reader in(bytes, source);
  if (in.str(4) != std::string(kMagic, 4)) in.fail("not a checkpoint (bad magic)");
  const std::uint64_t digest = in.u64();
  const std::string version = in.str(in.u32());
  const std::string json = in.str(in.u64());

  ModelConfig config;
  try {
    config = model_config_from_json(nlohmann::json::parse(json));
  } catch (const std::exception& e) {
    in.fail(std::string("unreadable model config: ") + e.what());
  }
  if (version != kModelCodeVersion || config_digest(config) != digest) {
    in.fail("config digest mismatch: checkpoint was written by model code '" + version +
            "', this build is '" + kModelCodeVersion +
            "'; parameters would be misinterpreted, retrain or use a matching build");
  }

  std::map<std::string, Entry> manifest;
  const std::uint64_t count = in.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = in.str(in.u32());
    Entry e;
    const std::uint32_t rank = in.u32();
    for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(in.u64());
    e.offset = in.u64();
    manifest[name] = std::move(e);
  }
  const std::size_t values_start = in.pos();
  const std::size_t n_values = (bytes.size() - values_start) / 8;
  if ((bytes.size() - values_start) % 8 != 0) in.fail("value section is not a whole number of doubles");

  auto fetch = [&](const std::string& name, const Shape& shape) {
    auto it = manifest.find(name);
    if (it == manifest.end()) in.fail("missing tensor '" + name + "'");
    if (it->second.shape != shape) {
      in.fail("tensor '" + name + "' has shape " + shape_str(it->second.shape) + ", model expects " +
              shape_str(shape));
    }
    const std::size_t n = numel(shape);
    if (it->second.offset + n > n_values) in.fail("tensor '" + name + "' runs past the end");
    Reader values(bytes, source);
    values.str(values_start + it->second.offset * 8);
    std::vector<double> out(n);
    for (double& v : out) v = values.f64();
    manifest.erase(it);
    return out;
  };

  SedModel model(config);
  for (const auto& p : model.parameters()) {
    const auto values = fetch(p.name, p.tensor.shape());
    Tensor t = p.tensor;
    std::copy(values.begin(), values.end(), t.mutable_data().begin());
  }
  for (auto& [name, buf] : model.buffers()) *buf = fetch(name, {buf->size()});
  if (!manifest.empty()) in.fail("unexpected tensor '" + manifest.begin()->first + "'");
  return model;
}

void save_checkpoint(const SedModel& model, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing '" + path.string() + "'");
}

SedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str(), path.string());
}

}  // namespace mbl
