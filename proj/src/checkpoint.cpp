// Copyright 2026 The refgame Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "refgame/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace refgame {
namespace {

constexpr char kMagic[8] = {'R', 'G', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kFlagAdam = 1u << 0;
constexpr std::uint32_t kFlagStats = 1u << 1;
constexpr std::uint32_t kFlagKl = 1u << 2;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t x) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t x) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
  }
  void i64(std::int64_t x) { u64(static_cast<std::uint64_t>(x)); }
  void f64(double x) { u64(std::bit_cast<std::uint64_t>(x)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void doubles(const std::vector<double>& v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& data, const std::string& origin) : data_(data), origin_(origin) {}

  void need(std::size_t n) {
    if (data_.size() - pos_ < n) fail("truncated file");
  }
  [[noreturn]] void fail(const std::string& what) {
    throw Error(origin_ + ": invalid checkpoint: " + what);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i) {
      x |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
    }
    return x;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i) {
      x |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
    }
    return x;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> doubles() {
    const std::uint64_t n = u64();
    if (n > (data_.size() - pos_) / 8) fail("array length exceeds file size");
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  void magic() {
    need(sizeof(kMagic));
    if (std::memcmp(data_.data() + pos_, kMagic, sizeof(kMagic)) != 0) fail("bad magic");
    pos_ += sizeof(kMagic);
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  const std::string& data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const PolicyModel& model, const TrainingState& state) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.u32(kVersion);
  std::uint32_t flags = 0;
  if (state.adam) flags |= kFlagAdam;
  if (state.score_stats) flags |= kFlagStats;
  if (state.kl_coefficient) flags |= kFlagKl;
  w.u32(flags);

  const auto& tokens = model.vocab().tokens();
  // The four specials are implied by the Vocabulary constructor.
  w.u32(static_cast<std::uint32_t>(tokens.size() - 4));
  for (std::size_t i = 4; i < tokens.size(); ++i) w.str(tokens[i]);

  const ModelDims& d = model.dims();
  for (int x : {d.context_window, d.d_model, d.n_layers, d.n_heads, d.d_ff}) {
    w.u32(static_cast<std::uint32_t>(x));
  }
  w.doubles(std::vector<double>(model.params().begin(), model.params().end()));
  w.i64(state.step);
  if (state.adam) {
    w.i64(state.adam->t);
    w.doubles(state.adam->m);
    w.doubles(state.adam->v);
  }
  if (state.score_stats) {
    w.u64(state.score_stats->count());
    w.f64(state.score_stats->mean());
    w.f64(state.score_stats->m2());
  }
  if (state.kl_coefficient) w.f64(*state.kl_coefficient);
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  r.magic();
  const std::uint32_t version = r.u32();
  if (version != kVersion) r.fail("unsupported version " + std::to_string(version));
  const std::uint32_t flags = r.u32();
  const std::uint32_t n_words = r.u32();
  std::vector<std::string> words;
  for (std::uint32_t i = 0; i < n_words; ++i) words.push_back(r.str());
  ModelDims dims;
  dims.context_window = static_cast<int>(r.u32());
  dims.d_model = static_cast<int>(r.u32());
  dims.n_layers = static_cast<int>(r.u32());
  dims.n_heads = static_cast<int>(r.u32());
  dims.d_ff = static_cast<int>(r.u32());
  std::vector<double> params = r.doubles();
  Vocabulary vocab(words);
  if (vocab.size() != n_words + 4) r.fail("duplicate vocabulary entries");
  Checkpoint ck{make_model_from_params(std::move(vocab), dims, std::move(params)), {}};
  ck.state.step = r.i64();
  if (flags & kFlagAdam) {
    AdamState a;
    a.t = r.i64();
    a.m = r.doubles();
    a.v = r.doubles();
    if (a.m.size() != ck.model.param_count() || a.v.size() != ck.model.param_count()) {
      r.fail("optimizer state size mismatch");
    }
    ck.state.adam = std::move(a);
  }
  if (flags & kFlagStats) {
    const std::uint64_t count = r.u64();
    const double mean = r.f64();
    const double m2 = r.f64();
    ck.state.score_stats = RunningMoments::from_state(count, mean, m2);
  }
  if (flags & kFlagKl) ck.state.kl_coefficient = r.f64();
  if (!r.at_end()) r.fail("trailing bytes");
  return ck;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw Error("failed writing " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_checkpoint(const std::filesystem::path& path, const PolicyModel& model,
                     const TrainingState& state) {
  write_file_atomic(path, serialize_checkpoint(model, state));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path), path.string());
}

}  // namespace refgame
