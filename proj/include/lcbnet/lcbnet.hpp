// Umbrella header.
#pragma once

#include "lcbnet/biasing.hpp"
#include "lcbnet/checkpoint.hpp"
#include "lcbnet/commands.hpp"
#include "lcbnet/config.hpp"
#include "lcbnet/corpus.hpp"
#include "lcbnet/errors.hpp"
#include "lcbnet/losses.hpp"
#include "lcbnet/matrix_io.hpp"
#include "lcbnet/model.hpp"
#include "lcbnet/numerics.hpp"
#include "lcbnet/rng.hpp"
#include "lcbnet/scoring.hpp"
#include "lcbnet/tokenizer.hpp"
#include "lcbnet/training.hpp"
