#pragma once

#include <string>
#include <string_view>

namespace permfl {

/// Lower-case hex SHA-1 digest.
std::string sha1_hex(std::string_view bytes);

/// git's blob object id for the given content ("blob <size>\0" prefix).
std::string git_blob_hash(std::string_view content);

/// git blob hash of a file's raw bytes. Throws IoError when unreadable.
std::string git_blob_hash_file(const std::string& path);

}  // namespace permfl
