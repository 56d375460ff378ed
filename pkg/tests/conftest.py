import os
import sys

import pytest

# Add project root to path
current_dir = os.path.dirname(os.path.abspath(__file__))
project_root = os.path.dirname(current_dir)
if project_root not in sys.path:
    sys.path.insert(0, project_root)

from common import config, fc_scheme
from common.r1cs import build_program, parse_program
from device.zk_device import load_firmware

F17 = config.EXAMPLE_MODULUS
ROOT = project_root
SCENARIO_DIR = os.path.join(ROOT, 'scenarios')

# Gate programs used across the suite, besides the bundled firmware files
MIXED_PROGRAM = """
inputs 2
w3 = add w1 w2
w4 = mul w3 w1
w5 = cmul 5 w4
output w5
"""

LINEAR_PROGRAM = """
inputs 2
w3 = cmul 2 w1
w4 = add w3 w2
output w4
"""


def scenario_path(name: str) -> str:
    return os.path.join(SCENARIO_DIR, name + '.yaml')


def program_corpus():
    """(name, GateProgram) pairs: every bundled firmware plus two inline programs."""
    corpus = [(name, load_firmware(f"{name}.prog"))
              for name in ("square", "product", "road_report", "siren", "report_ack")]
    corpus.append(("mixed", parse_program(MIXED_PROGRAM)))
    corpus.append(("linear", parse_program(LINEAR_PROGRAM)))
    return corpus


@pytest.fixture(scope="session")
def square_prog():
    return load_firmware("square.prog")


@pytest.fixture(scope="session")
def product_prog():
    return load_firmware("product.prog")


@pytest.fixture(scope="session")
def square_inst(square_prog):
    return build_program(square_prog, F17)


@pytest.fixture(scope="session")
def square_keys(square_inst):
    """(pp, pk, vk) for y = x*x over F17."""
    return fc_scheme.setup(128, square_inst)
