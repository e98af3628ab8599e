#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

#ifndef ARBLAB_TEST_TMP
#define ARBLAB_TEST_TMP "arblab_test_tmp"
#endif

// Fresh scratch directory per test, removed on destruction.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(std::string_view name) : path(std::filesystem::path(ARBLAB_TEST_TMP) / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(std::string_view leaf) const { return path / leaf; }

  std::filesystem::path write(std::string_view leaf, std::string_view contents) const {
    const auto p = path / leaf;
    std::ofstream out(p, std::ios::binary);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    return p;
  }
};
