#include "orpodistill/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "orpodistill/error.hpp"

namespace orpod::lm {

namespace {

constexpr char kMagic[4] = {'O', 'D', 'L', 'M'};

uint64_t fnv1a(const char* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  for (size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

void append(std::string& buf, const void* data, size_t n) {
  buf.append(static_cast<const char*>(data), n);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& p) {
  nlohmann::json layout = nlohmann::json::array();
  for (const ParamEntry& e : ckpt.params.layout.entries)
    layout.push_back({{"name", e.name},
                      {"offset", e.offset},
                      {"rows", e.rows},
                      {"cols", e.cols}});
  nlohmann::json header = {{"arch", ckpt.params.arch.to_json()},
                           {"epoch", ckpt.epoch},
                           {"layout", layout},
                           {"rng_state", ckpt.rng_state},
                           {"run_id", ckpt.run_id},
                           {"config_hash", ckpt.config_hash},
                           {"theta_len", ckpt.params.theta.size()}};
  const std::string hdr = header.dump();

  std::string buf;
  append(buf, kMagic, 4);
  const uint32_t version = kCheckpointVersion;
  append(buf, &version, sizeof version);
  const uint64_t hdr_len = hdr.size();
  append(buf, &hdr_len, sizeof hdr_len);
  buf += hdr;
  append(buf, ckpt.params.theta.data(),
         ckpt.params.theta.size() * sizeof(double));
  const uint64_t checksum = fnv1a(buf.data(), buf.size());
  append(buf, &checksum, sizeof checksum);

  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error(ErrorKind::IoError, "cannot open " + p.string());
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw Error(ErrorKind::IoError, "write failed: " + p.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw Error(ErrorKind::IoError, "cannot open " + p.string());
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  if (f.bad()) throw Error(ErrorKind::IoError, "read failed: " + p.string());

  if (buf.size() < 4 + sizeof(uint32_t) + 2 * sizeof(uint64_t))
    throw Error(ErrorKind::CorruptFile, "checkpoint truncated");
  if (std::memcmp(buf.data(), kMagic, 4) != 0)
    throw Error(ErrorKind::CorruptFile, "bad magic bytes");

  uint32_t version = 0;
  std::memcpy(&version, buf.data() + 4, sizeof version);
  if (version != kCheckpointVersion)
    throw Error(ErrorKind::VersionMismatch,
                "checkpoint version " + std::to_string(version) +
                    ", expected " + std::to_string(kCheckpointVersion));

  uint64_t stored = 0;
  std::memcpy(&stored, buf.data() + buf.size() - sizeof stored, sizeof stored);
  const uint64_t computed = fnv1a(buf.data(), buf.size() - sizeof stored);
  if (stored != computed)
    throw Error(ErrorKind::CorruptFile, "checksum mismatch");

  uint64_t hdr_len = 0;
  std::memcpy(&hdr_len, buf.data() + 8, sizeof hdr_len);
  const size_t hdr_off = 8 + sizeof hdr_len;
  if (hdr_off + hdr_len > buf.size() - sizeof stored)
    throw Error(ErrorKind::CorruptFile, "bad header length");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.substr(hdr_off, hdr_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::CorruptFile, std::string("bad header: ") + e.what());
  }

  Checkpoint ckpt;
  ckpt.params.arch = ArchDescriptor::from_json(header.at("arch"));
  ckpt.params.layout = build_layout(ckpt.params.arch);
  ckpt.epoch = header.at("epoch").get<int>();
  ckpt.rng_state = header.at("rng_state").get<std::string>();
  ckpt.run_id = header.at("run_id").get<std::string>();
  ckpt.config_hash = header.at("config_hash").get<uint64_t>();

  const size_t theta_len = header.at("theta_len").get<size_t>();
  if (theta_len != ckpt.params.layout.total)
    throw Error(ErrorKind::CorruptFile, "theta length disagrees with layout");
  const size_t theta_off = hdr_off + hdr_len;
  const size_t theta_bytes = theta_len * sizeof(double);
  if (theta_off + theta_bytes + sizeof stored != buf.size())
    throw Error(ErrorKind::CorruptFile, "theta payload size mismatch");
  ckpt.params.theta.resize(theta_len);
  std::memcpy(ckpt.params.theta.data(), buf.data() + theta_off, theta_bytes);
  return ckpt;
}

}  // namespace orpod::lm
