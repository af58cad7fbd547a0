"""Virtual smart-ring acquisition stack.

A complete software twin of a finger-worn multimodal sensing device and the
host toolchain that operates it: wire protocol, firmware simulator on a
deterministic virtual clock, simulated BLE-style link, host SDK
(discovery, calibration, live sessions, offline log retrieval), a PPG
heart-rate pipeline, a CLI and a console gateway.
"""

__version__ = "0.1.0"
