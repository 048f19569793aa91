#pragma once

#include "proxylab/commands.hpp"
#include "proxylab/config.hpp"
#include "proxylab/data.hpp"
#include "proxylab/embedder.hpp"
#include "proxylab/errors.hpp"
#include "proxylab/evalkit.hpp"
#include "proxylab/hexfloat.hpp"
#include "proxylab/io.hpp"
#include "proxylab/losses.hpp"
#include "proxylab/matrix.hpp"
#include "proxylab/numgrad.hpp"
#include "proxylab/pooling.hpp"
#include "proxylab/rng.hpp"
#include "proxylab/training.hpp"
