#pragma once

#include <openssl/evp.h>

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "dmac/datagen/image.hpp"

namespace dmac::data {

// Incremental SHA-256, hex output.
class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      throw IoError("sha256: digest context unavailable");
    }
  }

  Sha256& update(const void* data, std::size_t n) {
    EVP_DigestUpdate(ctx_.get(), data, n);
    return *this;
  }
  Sha256& update(std::string_view s) { return update(s.data(), s.size()); }
  Sha256& update(const std::vector<std::uint8_t>& v) { return update(v.data(), v.size()); }

  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int n = 0;
    EVP_DigestFinal_ex(ctx_.get(), md, &n);
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < n; ++i) {
      out += digits[md[i] >> 4];
      out += digits[md[i] & 15];
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline std::string sha256_hex(std::string_view s) { return Sha256().update(s).hex(); }

// Content digests cover the decoded pixels plus extents, so they do not
// depend on PNG encoder settings.
inline void digest_into(Sha256& h, const Image& img) {
  const std::uint64_t dims[2] = {img.width, img.height};
  h.update(dims, sizeof dims).update(img.rgb);
}

inline void digest_into(Sha256& h, const Mask& m) {
  const std::uint64_t dims[2] = {m.width, m.height};
  h.update(dims, sizeof dims).update(m.bits);
}

}  // namespace dmac::data
