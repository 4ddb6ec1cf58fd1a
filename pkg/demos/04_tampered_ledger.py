"""Exported ledgers are self-verifying.

The demo exports a replica's ledger, changes one byte in block 3, and shows
that the verifier names the first height it cannot vouch for.
"""

import tempfile
from pathlib import Path

from geobft.cli import main

ROOT = Path(__file__).resolve().parent.parent
scenario = str(ROOT / "scenarios" / "basic_z2_n4.ini")

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "ledger.hex"
    main(["run", "--scenario", scenario, "--export-ledger", str(path), "--out", str(Path(tmp) / "m.txt")])
    print("\n-- untouched export")
    main(["verify-ledger", "--scenario", scenario, "--ledger", str(path)])

    lines = path.read_text().splitlines()
    raw = bytearray.fromhex(lines[2])
    raw[40] ^= 0x01  # inside the header of block 3
    lines[2] = raw.hex()
    path.write_text("\n".join(lines) + "\n")
    print("\n-- one bit flipped in block 3")
    code = main(["verify-ledger", "--scenario", scenario, "--ledger", str(path)])
    print(f"exit code {code}")
