"""Cross-modal augmentation for infrared PCB defect detection."""

__version__ = "0.1.0"
