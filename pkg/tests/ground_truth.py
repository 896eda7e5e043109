"""What a perfect attacker should discover, computed from the config alone."""

from icsim.attacks import Target
from icsim.modbus import Area


def register_addresses(device_cfg, first=0, last=0xFFFF):
    out = set()
    for reg in device_cfg.registers:
        for address in range(reg.address, reg.address + reg.count):
            if first <= address <= last:
                out.add((reg.area, address))
    return out


def target_for(cfg, device_name, attacker="attacker"):
    """How the attacker reaches a device: over TCP when it can, else on the device's bus."""
    dev = cfg.device(device_name)
    att = next(a for a in cfg.attackers if a.name == attacker)
    for inbound in dev.inbound_connections:
        if inbound.type == "tcp" and att.network and dev.network \
                and dev.network.interface == att.network.interface:
            return Target("tcp", device=device_name, port=inbound.port, unit_id=inbound.unit_id)
    for inbound in dev.inbound_connections:
        if inbound.type == "serial" and inbound.bus in att.serial_buses:
            return Target("serial", bus=inbound.bus, unit_id=inbound.unit_id)
    raise LookupError(device_name)


def slaves(cfg):
    """Every device that serves Modbus."""
    return [d.name for d in cfg.devices if d.inbound_connections]


def units_behind(cfg, target):
    """Unit ids that answer on the link ``target`` points at."""
    if target.transport == "serial":
        return {i.unit_id for d in cfg.devices for i in d.inbound_connections
                if i.type == "serial" and i.bus == target.bus}
    dev = cfg.device(target.device)
    return {i.unit_id for i in dev.inbound_connections if i.type == "tcp" and i.port == target.port}


def polled_devices(cfg):
    """(poller, monitor index, polled device) for every monitor in the plant."""
    out = []
    for dev in cfg.devices:
        for index, mon in enumerate(dev.monitors):
            conn = dev.outbound(mon.connection)
            out.append((dev.name, index, conn.target))
    return out


def writable_linked(cfg, device_name):
    return [r for r in cfg.device(device_name).registers
            if r.physical_value and r.area in (Area.COIL, Area.HOLDING_REGISTER)]
