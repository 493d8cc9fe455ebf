#pragma once

// Little-endian primitives shared by the binary container formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace dtv::io {

static_assert(std::endian::native == std::endian::little, "container formats assume a little-endian host");

class Writer {
 public:
  explicit Writer(std::vector<char>& out) : out_(out) {}

  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const char*>(&value);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, std::size_t size) {
    const auto* p = static_cast<const char*>(data);
    out_.insert(out_.end(), p, p + size);
  }

 private:
  std::vector<char>& out_;
};

/// Bounds-checked cursor. `Error` is thrown with a message on overrun.
template <typename Error>
class Reader {
 public:
  Reader(const char* data, std::size_t size, std::string what) : data_(data), size_(size), what_(std::move(what)) {}

  template <typename T>
  T get() {
    T value;
    take(&value, sizeof(T));
    return value;
  }
  void take(void* dst, std::size_t size) {
    if (size > size_ - pos_) {
      throw Error(what_ + ": truncated (needed " + std::to_string(size) + " bytes at offset " +
                  std::to_string(pos_) + ", " + std::to_string(size_ - pos_) + " left)");
    }
    std::memcpy(dst, data_ + pos_, size);
    pos_ += size;
  }
  std::string string(std::size_t size) {
    std::string s(size, '\0');
    take(s.data(), size);
    return s;
  }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::vector<char> read_file(const std::string& path);
void write_file_atomic(const std::string& path, const std::vector<char>& bytes);

}  // namespace dtv::io
