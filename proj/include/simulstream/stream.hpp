#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "simulstream/error.hpp"

namespace simulstream {

constexpr int kDefaultFrameDim = 80;
constexpr int kDefaultPacketFrames = 7;  // frames per packet, q

// One acoustic feature frame (e.g. 80-dim filterbank row).
using FrameVector = std::vector<float>;

// The atomic READ unit: up to q consecutive frames. `index` is 1-based.
struct Packet {
  std::vector<FrameVector> frames;
  int index = 0;

  bool operator==(const Packet&) const = default;
};

// An utterance's speech input as an ordered packet sequence. Immutable after
// construction; read progress lives in the session state, not here.
struct SourceStream {
  std::vector<Packet> packets;

  int size() const { return static_cast<int>(packets.size()); }
  const Packet& packet(int index_1based) const {
    return packets.at(static_cast<size_t>(index_1based - 1));
  }

  bool operator==(const SourceStream&) const = default;
};

struct TargetLanguage {
  std::string tag;  // e.g. "es", "fr"

  // Reserved vocabulary token prepended to unified-model targets.
  std::string lang_token() const { return "<2" + tag + ">"; }

  auto operator<=>(const TargetLanguage&) const = default;
};

struct Utterance {
  std::string id;
  SourceStream stream;
  std::vector<std::string> transcript;                       // may be empty
  std::map<std::string, std::vector<std::string>> references;  // tag -> tokens

  const std::vector<std::string>& reference(const std::string& tag) const {
    auto it = references.find(tag);
    if (it == references.end())
      throw DataError("utterance " + id + ": no reference for language " + tag);
    return it->second;
  }
};

// Groups frames into packets of exactly q frames; the last packet may be
// short and still counts as one packet.
inline std::vector<Packet> packetize(const std::vector<FrameVector>& frames,
                                     int q) {
  if (q < 1) throw ConfigError("packet size q must be >= 1, got " + std::to_string(q));
  std::vector<Packet> packets;
  packets.reserve((frames.size() + q - 1) / q);
  for (size_t start = 0; start < frames.size(); start += q) {
    Packet p;
    p.index = static_cast<int>(packets.size()) + 1;
    size_t end = std::min(frames.size(), start + static_cast<size_t>(q));
    p.frames.assign(frames.begin() + start, frames.begin() + end);
    packets.push_back(std::move(p));
  }
  return packets;
}

inline SourceStream make_stream(const std::vector<FrameVector>& frames, int q) {
  return SourceStream{packetize(frames, q)};
}

// Discrete content summary of one packet: the rounded mean over all frame
// values. The synthetic generator writes a token id into every frame value,
// so the summary recovers that id exactly.
inline std::int64_t packet_signature(const Packet& p) {
  double sum = 0.0;
  std::int64_t count = 0;
  for (const auto& frame : p.frames) {
    for (float v : frame) {
      sum += v;
      ++count;
    }
  }
  if (count == 0) return 0;
  return std::llround(sum / static_cast<double>(count));
}

}  // namespace simulstream
