"""Modbus ICS simulator: devices, virtual network, attacks, labeled datasets."""
