#include "permfl/hash.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <sstream>

#include "permfl/error.hpp"

namespace permfl {

int exit_code(ErrorCategory category) noexcept {
  switch (category) {
    case ErrorCategory::Numeric:
      return 3;
    case ErrorCategory::Io:
      return 4;
    case ErrorCategory::Config:
    case ErrorCategory::Unsupported:
    case ErrorCategory::Evaluation:
      return 2;
  }
  return 2;
}

std::string sha1_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha1(), nullptr) != 1)
    throw IoError("sha1 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::string git_blob_hash(std::string_view content) {
  std::string object = "blob " + std::to_string(content.size());
  object.push_back('\0');
  object.append(content);
  return sha1_hex(object);
}

std::string git_blob_hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return git_blob_hash(buf.str());
}

}  // namespace permfl
