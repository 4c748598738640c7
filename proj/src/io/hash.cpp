#include "anomaly_recon/io/hash.hpp"

#include <array>
#include <fstream>

#include <openssl/evp.h>

#include "anomaly_recon/error.hpp"

namespace anomaly_recon::io {

namespace {

class Digest {
 public:
  Digest() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw Error("SHA-256 initialisation failed");
  }
  ~Digest() { EVP_MD_CTX_free(ctx_); }
  Digest(const Digest&) = delete;
  Digest& operator=(const Digest&) = delete;

  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_, data, n) != 1) throw Error("SHA-256 update failed");
  }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_, md.data(), &len) != 1) throw Error("SHA-256 finalisation failed");
    static const char* kHex = "0123456789abcdef";
    std::string out;
    for (unsigned int n = 0; n < len; ++n) {
      out.push_back(kHex[md[n] >> 4]);
      out.push_back(kHex[md[n] & 15]);
    }
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  Digest d;
  d.update(bytes.data(), bytes.size());
  return d.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingArtifact("cannot read " + path.string());
  Digest d;
  std::array<char, 1 << 16> buf{};
  while (f) {
    f.read(buf.data(), buf.size());
    if (f.gcount() > 0) d.update(buf.data(), static_cast<std::size_t>(f.gcount()));
  }
  return d.hex();
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view stream, std::uint64_t index) {
  std::uint64_t h = mix(base);
  for (unsigned char c : stream) h = mix(h ^ c);
  return mix(h ^ mix(index));
}

}  // namespace anomaly_recon::io
