#pragma once

#include <stdexcept>
#include <string>

namespace toad {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UnknownToken : public Error {
public:
    UnknownToken(char symbol, int row, int col)
        : Error("unknown token '" + std::string(1, symbol) + "' at row " + std::to_string(row) +
                ", column " + std::to_string(col)),
          symbol(symbol), row(row), col(col) {}

    char symbol;
    int row;
    int col;
};

class RaggedInput : public Error {
public:
    using Error::Error;
};

class SliceTooLarge : public Error {
public:
    using Error::Error;
};

class EmptySupport : public Error {
public:
    using Error::Error;
};

class LevelTooSmall : public Error {
public:
    using Error::Error;
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

class NonFiniteLoss : public Error {
public:
    using Error::Error;
};

class Interrupted : public Error {
public:
    using Error::Error;
};

class UntrainedModel : public Error {
public:
    using Error::Error;
};

class ShapeTooSmall : public Error {
public:
    using Error::Error;
};

class MaskShapeMismatch : public Error {
public:
    MaskShapeMismatch(int expected_h, int expected_w, int got_h, int got_w)
        : Error("injection mask is " + std::to_string(got_h) + "x" + std::to_string(got_w) +
                ", expected " + std::to_string(expected_h) + "x" + std::to_string(expected_w)),
          expected_h(expected_h), expected_w(expected_w) {}

    int expected_h;
    int expected_w;
};

class PatternTooLarge : public Error {
public:
    using Error::Error;
};

class SizeMismatch : public Error {
public:
    using Error::Error;
};

class InsufficientClasses : public Error {
public:
    using Error::Error;
};

class DegenerateInput : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    using Error::Error;
};

}  // namespace toad
