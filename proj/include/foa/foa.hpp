#pragma once

#include "foa/attack.hpp"
#include "foa/clustering.hpp"
#include "foa/encoders.hpp"
#include "foa/ensemble.hpp"
#include "foa/error.hpp"
#include "foa/eval.hpp"
#include "foa/image.hpp"
#include "foa/io.hpp"
#include "foa/losses.hpp"
#include "foa/matrix.hpp"
#include "foa/rng.hpp"
#include "foa/synth.hpp"
#include "foa/transport.hpp"
