#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "simulstream/error.hpp"
#include "simulstream/stream.hpp"

namespace simulstream {

// One manifest row. Reference texts are kept verbatim; tokenization happens
// when an Utterance is materialized.
struct ManifestRecord {
  std::string id;
  std::string features;  // feature file path, relative to the manifest dir
  std::int64_t n_frames = 0;
  std::string transcript;
  std::vector<std::string> refs;  // one per language column, file order
};

// Parsed manifest. Holds rows only; feature files are opened per utterance,
// so corpus-scale manifests never pull features into memory.
struct Manifest {
  std::string split;                    // train|dev|test ("" if unknown)
  std::filesystem::path base_dir;       // resolves relative feature paths
  std::vector<std::string> languages;   // ref column tags, file order
  std::vector<ManifestRecord> records;
};

inline std::vector<std::string> split_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

inline std::string infer_split(const std::filesystem::path& path) {
  std::string stem = path.stem().string();
  for (const char* name : {"train", "dev", "test"}) {
    if (stem.size() >= std::strlen(name) &&
        stem.compare(stem.size() - std::strlen(name), std::string::npos, name) == 0)
      return name;
  }
  return "";
}

}  // namespace detail

// Reads a manifest TSV. Header: id, features, n_frames, transcript, then one
// ref_<tag> column per language. `languages` lists the tags the caller needs;
// every one must be present. Rows keep file order.
inline Manifest load_manifest(const std::filesystem::path& path,
                              const std::vector<std::string>& languages = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path.string());

  Manifest m;
  m.base_dir = path.has_parent_path() ? path.parent_path()
                                      : std::filesystem::path(".");
  m.split = detail::infer_split(path);

  std::string line;
  if (!std::getline(in, line))
    throw DataError("manifest is empty: " + path.string());
  auto header = detail::split_tabs(line);
  const std::vector<std::string> fixed = {"id", "features", "n_frames",
                                          "transcript"};
  if (header.size() < fixed.size() + 1)
    throw DataError("manifest schema error: expected at least 5 columns, got " +
                    std::to_string(header.size()));
  for (size_t i = 0; i < fixed.size(); ++i) {
    if (header[i] != fixed[i])
      throw DataError("manifest schema error: column " + std::to_string(i + 1) +
                      " must be '" + fixed[i] + "', got '" + header[i] + "'");
  }
  for (size_t i = fixed.size(); i < header.size(); ++i) {
    if (header[i].rfind("ref_", 0) != 0)
      throw DataError("manifest schema error: reference column '" + header[i] +
                      "' must be named ref_<tag>");
    m.languages.push_back(header[i].substr(4));
  }
  for (const auto& lang : languages) {
    bool found = false;
    for (const auto& have : m.languages) found = found || have == lang;
    if (!found)
      throw DataError("manifest schema error: missing column ref_" + lang);
  }

  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cols = detail::split_tabs(line);
    if (cols.size() != header.size())
      throw DataError("manifest row " + std::to_string(line_no) + " has " +
                      std::to_string(cols.size()) + " columns, expected " +
                      std::to_string(header.size()));
    ManifestRecord rec;
    rec.id = cols[0];
    rec.features = cols[1];
    try {
      rec.n_frames = std::stoll(cols[2]);
    } catch (const std::exception&) {
      throw DataError("manifest record " + rec.id + ": bad n_frames '" +
                      cols[2] + "'");
    }
    if (rec.n_frames < 0)
      throw DataError("manifest record " + rec.id + ": negative n_frames");
    rec.transcript = cols[3];
    rec.refs.assign(cols.begin() + 4, cols.end());
    m.records.push_back(std::move(rec));
  }
  return m;
}

inline std::string manifest_to_string(const Manifest& m) {
  std::string out = "id\tfeatures\tn_frames\ttranscript";
  for (const auto& lang : m.languages) out += "\tref_" + lang;
  out += '\n';
  for (const auto& rec : m.records) {
    out += rec.id;
    out += '\t';
    out += rec.features;
    out += '\t';
    out += std::to_string(rec.n_frames);
    out += '\t';
    out += rec.transcript;
    for (const auto& ref : rec.refs) {
      out += '\t';
      out += ref;
    }
    out += '\n';
  }
  return out;
}

inline void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest: " + path.string());
  out << manifest_to_string(m);
}

// Feature files are raw 32-bit little-endian floats, row major (frames x D).
inline void write_features(const std::filesystem::path& path,
                           const std::vector<FrameVector>& frames) {
  static_assert(std::endian::native == std::endian::little,
                "feature files are little-endian");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write feature file: " + path.string());
  for (const auto& frame : frames) {
    out.write(reinterpret_cast<const char*>(frame.data()),
              static_cast<std::streamsize>(frame.size() * sizeof(float)));
  }
}

// Reads a feature file whose frame count is known from the manifest. The
// frame dimension is derived from the file size; a size that does not factor
// as n_frames x D x 4 is an integrity error.
inline std::vector<FrameVector> read_features(const std::filesystem::path& path,
                                              std::int64_t n_frames,
                                              const std::string& record_id) {
  static_assert(std::endian::native == std::endian::little,
                "feature files are little-endian");
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in)
    throw DataError("record " + record_id + ": cannot open feature file " +
                    path.string());
  const std::int64_t bytes = static_cast<std::int64_t>(in.tellg());
  if (n_frames == 0) {
    if (bytes != 0)
      throw DataError("record " + record_id +
                      ": frame count mismatch (manifest says 0 frames, file "
                      "has " + std::to_string(bytes) + " bytes)");
    return {};
  }
  const std::int64_t frame_bytes = bytes / n_frames;
  if (bytes % n_frames != 0 || frame_bytes % sizeof(float) != 0 ||
      frame_bytes == 0)
    throw DataError("record " + record_id + ": frame count mismatch (file " +
                    path.string() + " has " + std::to_string(bytes) +
                    " bytes, not divisible into " + std::to_string(n_frames) +
                    " frames)");
  const std::int64_t dim = frame_bytes / static_cast<std::int64_t>(sizeof(float));
  in.seekg(0);
  std::vector<FrameVector> frames(static_cast<size_t>(n_frames),
                                  FrameVector(static_cast<size_t>(dim)));
  for (auto& frame : frames) {
    in.read(reinterpret_cast<char*>(frame.data()),
            static_cast<std::streamsize>(dim * sizeof(float)));
    if (!in)
      throw DataError("record " + record_id + ": short read from " +
                      path.string());
    for (float v : frame) {
      if (!std::isfinite(v))
        throw DataError("record " + record_id + ": non-finite feature value");
    }
  }
  return frames;
}

// Materializes one manifest row: loads features, packetizes, and tokenizes
// the requested references.
inline Utterance load_utterance(const Manifest& m, const ManifestRecord& rec,
                                const std::vector<std::string>& languages,
                                int q) {
  std::filesystem::path feat = rec.features;
  if (feat.is_relative()) feat = m.base_dir / feat;
  Utterance utt;
  utt.id = rec.id;
  utt.stream = make_stream(read_features(feat, rec.n_frames, rec.id), q);
  utt.transcript = split_tokens(rec.transcript);
  for (const auto& lang : languages) {
    size_t col = 0;
    while (col < m.languages.size() && m.languages[col] != lang) ++col;
    if (col == m.languages.size())
      throw DataError("manifest schema error: missing column ref_" + lang);
    auto tokens = split_tokens(rec.refs[col]);
    if (tokens.empty())
      throw DataError("record " + rec.id + ": empty reference for language " +
                      lang);
    utt.references[lang] = std::move(tokens);
  }
  return utt;
}

}  // namespace simulstream
