#pragma once

#include <stdexcept>
#include <string>

namespace eena {

// Base class for every error the engine raises on purpose.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor/graph shape mismatches.
class shape_error : public error {
 public:
  using error::error;
};

// Bad input data: malformed files, invalid configs, empty datasets.
class data_error : public error {
 public:
  using error::error;
};

// A morphism could not be applied at the requested location.
class morph_error : public error {
 public:
  using error::error;
};

}  // namespace eena
