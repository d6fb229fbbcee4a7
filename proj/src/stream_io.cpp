#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "qlink/event_sim.hpp"

namespace qlink {

namespace {

constexpr char kMagic[8] = {'Q', 'L', 'N', 'K', 'S', 'T', 'R', 'M'};
constexpr std::size_t kRecordBytes = 15;

template <typename T>
void put(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T decode(const unsigned char* bytes) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(static_cast<T>(bytes[i]) << (8 * i));
  return value;
}

template <typename T>
T get(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw StreamError("unexpected end of stream");
  return decode<T>(bytes);
}

}  // namespace

void write_stream(const EventStream& stream, std::ostream& out) {
  const StreamHeader& h = stream.header;
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, h.version);
  put<std::uint64_t>(out, h.seed);
  put<std::uint64_t>(out, h.duration_ps);
  put<std::uint64_t>(out, h.config_digest);
  put<std::uint64_t>(out, h.storage_time_ps);
  put<std::uint64_t>(out, h.coincidence_window_ps);
  put<std::uint64_t>(out, h.mode_duration_ps);
  put<std::uint64_t>(out, h.trial_length_ps);
  put<std::uint64_t>(out, h.cycle_period_ps);
  put<std::uint64_t>(out, h.lock_period_ps);
  put<std::uint32_t>(out, h.modes_per_trial);
  put<std::uint8_t>(out, h.herald_port == HeraldPort::plus ? 0 : 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(h.schedule.size()));
  for (const auto& e : h.schedule) {
    put<std::uint8_t>(out, static_cast<std::uint8_t>(e.kind));
    put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(e.theta));
  }
  put<std::uint64_t>(out, stream.records.size());
  std::vector<unsigned char> buffer(stream.records.size() * kRecordBytes);
  unsigned char* p = buffer.data();
  for (const auto& r : stream.records) {
    for (int i = 0; i < 8; ++i) *p++ = static_cast<unsigned char>(r.time_ps >> (8 * i));
    *p++ = static_cast<unsigned char>(r.channel);
    for (int i = 0; i < 4; ++i) *p++ = static_cast<unsigned char>(r.trial >> (8 * i));
    for (int i = 0; i < 2; ++i) *p++ = static_cast<unsigned char>(r.mode >> (8 * i));
  }
  out.write(reinterpret_cast<const char*>(buffer.data()), static_cast<std::streamsize>(buffer.size()));
  if (!out) throw StreamError("failed to write event stream");
}

void write_stream(const EventStream& stream, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StreamError("cannot open " + path + " for writing");
  write_stream(stream, out);
}

EventStream read_stream(std::istream& in) {
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic))) throw StreamError("unexpected end of stream");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw StreamError("malformed header: bad magic");

  EventStream stream;
  StreamHeader& h = stream.header;
  h.version = get<std::uint32_t>(in);
  if (h.version != kStreamVersion) {
    throw StreamError("version mismatch: stream version " + std::to_string(h.version) + ", expected " +
                      std::to_string(kStreamVersion));
  }
  h.seed = get<std::uint64_t>(in);
  h.duration_ps = get<std::uint64_t>(in);
  h.config_digest = get<std::uint64_t>(in);
  h.storage_time_ps = get<std::uint64_t>(in);
  h.coincidence_window_ps = get<std::uint64_t>(in);
  h.mode_duration_ps = get<std::uint64_t>(in);
  h.trial_length_ps = get<std::uint64_t>(in);
  h.cycle_period_ps = get<std::uint64_t>(in);
  h.lock_period_ps = get<std::uint64_t>(in);
  h.modes_per_trial = get<std::uint32_t>(in);
  auto port = get<std::uint8_t>(in);
  if (port > 1) throw StreamError("malformed header: herald port code " + std::to_string(port));
  h.herald_port = port == 0 ? HeraldPort::plus : HeraldPort::minus;
  auto entries = get<std::uint32_t>(in);
  if (entries == 0 || entries > (1u << 20)) throw StreamError("malformed header: schedule length");
  for (std::uint32_t i = 0; i < entries; ++i) {
    auto kind = get<std::uint8_t>(in);
    if (kind > 1) throw StreamError("malformed header: schedule kind " + std::to_string(kind));
    double theta = std::bit_cast<double>(get<std::uint64_t>(in));
    h.schedule.push_back({static_cast<ReadoutKind>(kind), theta});
  }
  if (h.cycle_period_ps == 0 || h.lock_period_ps >= h.cycle_period_ps || h.mode_duration_ps == 0 ||
      h.trial_length_ps == 0 || h.modes_per_trial == 0) {
    throw StreamError("malformed header: inconsistent timing");
  }

  auto count = get<std::uint64_t>(in);
  constexpr std::uint64_t kChunk = 1 << 16;
  std::vector<unsigned char> buffer;
  std::uint64_t previous = 0;
  for (std::uint64_t done = 0; done < count;) {
    std::uint64_t n = std::min(kChunk, count - done);
    buffer.resize(n * kRecordBytes);
    if (!in.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(buffer.size()))) {
      throw StreamError("unexpected end of stream");
    }
    for (std::uint64_t i = 0; i < n; ++i, ++done) {
      const unsigned char* p = buffer.data() + i * kRecordBytes;
      EventRecord r;
      r.time_ps = decode<std::uint64_t>(p);
      if (p[8] > 3) throw StreamError("invalid channel code " + std::to_string(p[8]) + " at record " + std::to_string(done));
      r.channel = static_cast<Channel>(p[8]);
      r.trial = decode<std::uint32_t>(p + 9);
      r.mode = decode<std::uint16_t>(p + 13);
      if (r.mode >= h.modes_per_trial) {
        throw StreamError("mode index out of range at record " + std::to_string(done));
      }
      if (r.time_ps < previous) throw StreamError("non-monotonic timestamps at record " + std::to_string(done));
      previous = r.time_ps;
      stream.records.push_back(r);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw StreamError("trailing data after the last record");
  return stream;
}

EventStream read_stream(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StreamError("cannot open " + path);
  return read_stream(in);
}

void write_stream_csv(const EventStream& stream, std::ostream& out) {
  out << "time_ps,channel,trial,mode\n";
  for (const auto& r : stream.records) {
    out << r.time_ps << ',' << static_cast<int>(r.channel) << ',' << r.trial << ',' << r.mode << '\n';
  }
}

}  // namespace qlink
