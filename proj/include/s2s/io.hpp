// include/s2s/io.hpp

// Copyright 2026  The s2s authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// On-disk formats. All binary payloads are little-endian regardless of
// host (encoded byte by byte). Writers go through a temp file + rename so
// a crash never leaves a half-written artifact under the final name.
//
//   k-means:   magic "S2SK", version u32, K u32, D u32, K*D f64
//   features:  magic "S2SF", version u32, n u64, offsets u64*n, records
//              (per record: presence u8 + [t u32, d u32, t*d f64] per side)
//   corpus:    text file, '#' header line (key=value pairs), one record per
//              line with tab-separated fields; features in sibling <path>.feat
//   units:     text file, one sequence per line, space-separated ids
//   loss log:  CSV, header "step,l_speech,l_unit,l_total"

#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "s2s/common.hpp"
#include "s2s/kmeans.hpp"
#include "s2s/toyworld.hpp"
#include "s2s/units.hpp"

namespace s2s {

// ---------------------------------------------------------------------------
// little-endian primitives

inline void put_u8(std::ostream& os, uint8_t v) {
  os.put(static_cast<char>(v));
}
inline void put_u16(std::ostream& os, uint16_t v) {
  for (int i = 0; i < 2; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u32(std::ostream& os, uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::ostream& os, uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::ostream& os, double v) {
  uint64_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(os, bits);
}

inline uint8_t get_u8(std::istream& is, const char* what) {
  const int c = is.get();
  S2S_REQUIRE(c != EOF, "truncated file reading ", what);
  return static_cast<uint8_t>(c);
}
inline uint16_t get_u16(std::istream& is, const char* what) {
  uint16_t v = 0;
  for (int i = 0; i < 2; ++i)
    v |= static_cast<uint16_t>(get_u8(is, what)) << (8 * i);
  return v;
}
inline uint32_t get_u32(std::istream& is, const char* what) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<uint32_t>(get_u8(is, what)) << (8 * i);
  return v;
}
inline uint64_t get_u64(std::istream& is, const char* what) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<uint64_t>(get_u8(is, what)) << (8 * i);
  return v;
}
inline double get_f64(std::istream& is, const char* what) {
  const uint64_t bits = get_u64(is, what);
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  S2S_CHECK(s.size() < 65536, "string too long for format");
  put_u16(os, static_cast<uint16_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_string(std::istream& is, const char* what) {
  const uint16_t n = get_u16(is, what);
  std::string s(n, '\0');
  is.read(s.data(), n);
  S2S_REQUIRE(is.gcount() == n, "truncated file reading ", what);
  return s;
}

inline void expect_magic(std::istream& is, const char* magic,
                         const std::string& path) {
  char buf[5] = {0, 0, 0, 0, 0};
  is.read(buf, 4);
  S2S_REQUIRE(is.gcount() == 4 && std::string(buf) == magic, "bad magic in ",
              path, ": expected ", magic);
}

// Write through <path>.tmp and rename into place.
inline void atomic_write(const std::string& path,
                         const std::function<void(std::ostream&)>& body) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    S2S_REQUIRE(os.good(), "cannot open ", tmp, " for writing");
    body(os);
    os.flush();
    S2S_REQUIRE(os.good(), "write failed on ", tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  S2S_REQUIRE(!ec, "rename ", tmp, " -> ", path, ": ", ec.message());
}

// ---------------------------------------------------------------------------
// k-means model file

inline void save_kmeans(const std::string& path, const KMeansModel& model) {
  atomic_write(path, [&](std::ostream& os) {
    os.write("S2SK", 4);
    put_u32(os, 1);
    put_u32(os, static_cast<uint32_t>(model.k));
    put_u32(os, static_cast<uint32_t>(model.d));
    for (double v : model.centroids) put_f64(os, v);
  });
}

inline KMeansModel load_kmeans(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  S2S_REQUIRE(is.good(), "cannot open ", path);
  expect_magic(is, "S2SK", path);
  const uint32_t version = get_u32(is, "version");
  S2S_REQUIRE(version == 1, "unsupported S2SK version ", version, " in ",
              path);
  KMeansModel model;
  model.k = get_u32(is, "K");
  model.d = get_u32(is, "D");
  model.centroids.resize(static_cast<size_t>(model.k * model.d));
  for (double& v : model.centroids) v = get_f64(is, "centroid");
  return model;
}

// ---------------------------------------------------------------------------
// corpus files (text + binary feature sibling)

inline std::string feature_sibling(const std::string& corpus_path) {
  return corpus_path + ".feat";
}

namespace detail {

inline void put_feature_side(std::ostream& os, bool present,
                             const FeatureMatrix& f) {
  put_u8(os, present ? 1 : 0);
  if (!present) return;
  put_u32(os, static_cast<uint32_t>(f.t));
  put_u32(os, static_cast<uint32_t>(f.d));
  for (double v : f.data) put_f64(os, v);
}

inline bool get_feature_side(std::istream& is, FeatureMatrix* f) {
  if (!get_u8(is, "feature presence")) return false;
  f->t = get_u32(is, "feature T");
  f->d = get_u32(is, "feature D");
  f->data.resize(static_cast<size_t>(f->t * f->d));
  for (double& v : f->data) v = get_f64(is, "feature value");
  return true;
}

inline uint64_t feature_side_bytes(bool present, const FeatureMatrix& f) {
  return present ? 1 + 4 + 4 + 8 * f.data.size() : 1;
}

inline std::vector<int64_t> parse_id_list(const std::string& field,
                                          int64_t line_no,
                                          const std::string& path) {
  std::vector<int64_t> out;
  if (field.empty()) return out;
  std::istringstream ss(field);
  std::string tok;
  while (ss >> tok) {
    try {
      size_t used = 0;
      out.push_back(std::stoll(tok, &used));
      S2S_REQUIRE(used == tok.size(), "bad id");
    } catch (const std::exception&) {
      throw RuntimeError(str_cat(path, ":", line_no, ": bad id '", tok, "'"));
    }
  }
  return out;
}

}  // namespace detail

inline void save_corpus(const std::string& path, const ToyCorpus& corpus) {
  atomic_write(path, [&](std::ostream& os) {
    const CorpusMeta& m = corpus.meta;
    os << "# s2s_corpus v1 split=" << m.split << " world_seed=" << m.world_seed
       << " corpus_seed=" << m.corpus_seed
       << " semantic_vocab=" << m.semantic_vocab << " k=" << m.k
       << " d=" << m.d << " len_lo=" << m.len_lo << " len_hi=" << m.len_hi
       << " frames_lo=" << m.frames_lo << " frames_hi=" << m.frames_hi
       << " n=" << corpus.records.size() << "\n";
    for (const ToyRecord& r : corpus.records) {
      os << units_to_line(r.semantic) << '\t' << r.text_src << '\t'
         << r.text_tgt << '\t' << units_to_line(r.units_src) << '\t'
         << units_to_line(r.units_tgt) << '\t'
         << (r.synthetic_target ? "synth" : "orig") << "\n";
    }
  });
  atomic_write(feature_sibling(path), [&](std::ostream& os) {
    os.write("S2SF", 4);
    put_u32(os, 1);
    const uint64_t n = corpus.records.size();
    put_u64(os, n);
    uint64_t offset = 4 + 4 + 8 + 8 * n;
    for (const ToyRecord& r : corpus.records) {
      put_u64(os, offset);
      offset += detail::feature_side_bytes(r.has_feat_src, r.feat_src) +
                detail::feature_side_bytes(r.has_feat_tgt, r.feat_tgt);
    }
    for (const ToyRecord& r : corpus.records) {
      detail::put_feature_side(os, r.has_feat_src, r.feat_src);
      detail::put_feature_side(os, r.has_feat_tgt, r.feat_tgt);
    }
  });
}

inline ToyCorpus load_corpus(const std::string& path) {
  std::ifstream is(path);
  S2S_REQUIRE(is.good(), "cannot open ", path);
  ToyCorpus corpus;
  std::string line;
  S2S_REQUIRE(static_cast<bool>(std::getline(is, line)),
              "empty corpus file ", path);
  S2S_REQUIRE(line.rfind("# s2s_corpus v1 ", 0) == 0,
              path, ":1: not a corpus file");
  uint64_t n_declared = 0;
  {
    std::istringstream hs(line.substr(2));
    std::string tok;
    while (hs >> tok) {
      const size_t eq = tok.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = tok.substr(0, eq);
      const std::string val = tok.substr(eq + 1);
      CorpusMeta& m = corpus.meta;
      try {
        if (key == "split") m.split = val;
        else if (key == "world_seed") m.world_seed = std::stoull(val);
        else if (key == "corpus_seed") m.corpus_seed = std::stoull(val);
        else if (key == "semantic_vocab") m.semantic_vocab = std::stoll(val);
        else if (key == "k") m.k = std::stoll(val);
        else if (key == "d") m.d = std::stoll(val);
        else if (key == "len_lo") m.len_lo = std::stoll(val);
        else if (key == "len_hi") m.len_hi = std::stoll(val);
        else if (key == "frames_lo") m.frames_lo = std::stoll(val);
        else if (key == "frames_hi") m.frames_hi = std::stoll(val);
        else if (key == "n") n_declared = std::stoull(val);
      } catch (const std::exception&) {
        throw RuntimeError(str_cat(path, ":1: bad header value ", tok));
      }
    }
  }
  int64_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
      const size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos
                                              ? std::string::npos
                                              : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    S2S_REQUIRE(fields.size() == 6, path, ":", line_no,
                ": expected 6 tab-separated fields, got ", fields.size());
    ToyRecord rec;
    rec.semantic = detail::parse_id_list(fields[0], line_no, path);
    rec.text_src = fields[1];
    rec.text_tgt = fields[2];
    rec.units_src = detail::parse_id_list(fields[3], line_no, path);
    rec.units_tgt = detail::parse_id_list(fields[4], line_no, path);
    S2S_REQUIRE(fields[5] == "orig" || fields[5] == "synth", path, ":",
                line_no, ": bad flag '", fields[5], "'");
    rec.synthetic_target = fields[5] == "synth";
    corpus.records.push_back(std::move(rec));
  }
  S2S_REQUIRE(corpus.records.size() == n_declared, path,
              ": header declares ", n_declared, " records, file has ",
              corpus.records.size());

  const std::string fpath = feature_sibling(path);
  std::ifstream fs(fpath, std::ios::binary);
  S2S_REQUIRE(fs.good(), "cannot open ", fpath);
  expect_magic(fs, "S2SF", fpath);
  const uint32_t version = get_u32(fs, "version");
  S2S_REQUIRE(version == 1, "unsupported S2SF version ", version);
  const uint64_t n = get_u64(fs, "record count");
  S2S_REQUIRE(n == corpus.records.size(), fpath, ": has ", n,
              " records, corpus has ", corpus.records.size());
  for (uint64_t i = 0; i < n; ++i) get_u64(fs, "offset");
  for (ToyRecord& rec : corpus.records) {
    rec.has_feat_src = detail::get_feature_side(fs, &rec.feat_src);
    rec.has_feat_tgt = detail::get_feature_side(fs, &rec.feat_tgt);
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// unit corpus files

inline void save_unit_corpus(const std::string& path,
                             const std::vector<std::vector<int64_t>>& seqs) {
  atomic_write(path, [&](std::ostream& os) {
    for (const auto& s : seqs) os << units_to_line(s) << "\n";
  });
}

inline std::vector<std::vector<int64_t>> load_unit_corpus(
    const std::string& path) {
  std::ifstream is(path);
  S2S_REQUIRE(is.good(), "cannot open ", path);
  std::vector<std::vector<int64_t>> out;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    out.push_back(detail::parse_id_list(line, line_no, path));
  }
  return out;
}

}  // namespace s2s
