"""Credential material for the secure transports.

TLS uses ECDSA P-256 certificates chained to a self-signed test CA.
The SSH-style transports use an RSA-3072 host key (server identity) and
Ed25519 client keys checked against an authorized-keys list.

Key file formats are deliberately small: PEM for TLS and RSA, one
base64 line for Ed25519 keys (``ed25519 <b64-raw-32> [comment]``).
"""

from __future__ import annotations

import base64
import datetime
import ipaddress
import os
from dataclasses import dataclass
from pathlib import Path

from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, rsa
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.x509.oid import NameOID


class CredentialError(Exception):
    pass


# ---------------------------------------------------------------- TLS ----


def _name(cn: str) -> x509.Name:
    return x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, cn)])


def make_tls_material(
    directory: str | Path, hostnames: tuple[str, ...] = ("localhost",)
) -> dict[str, str]:
    """Generate a CA plus a server cert/key under directory.

    Returns paths: {"ca": ..., "cert": ..., "key": ...}.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    now = datetime.datetime.now(datetime.timezone.utc)

    ca_key = ec.generate_private_key(ec.SECP256R1())
    ca_cert = (
        x509.CertificateBuilder()
        .subject_name(_name("srv6kit test CA"))
        .issuer_name(_name("srv6kit test CA"))
        .public_key(ca_key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(now - datetime.timedelta(minutes=5))
        .not_valid_after(now + datetime.timedelta(days=365))
        .add_extension(x509.BasicConstraints(ca=True, path_length=0), critical=True)
        .sign(ca_key, hashes.SHA256())
    )

    srv_key = ec.generate_private_key(ec.SECP256R1())
    sans: list[x509.GeneralName] = [x509.DNSName(h) for h in hostnames]
    sans.append(x509.IPAddress(ipaddress.IPv4Address("127.0.0.1")))
    sans.append(x509.IPAddress(ipaddress.IPv6Address("::1")))
    srv_cert = (
        x509.CertificateBuilder()
        .subject_name(_name("srv6kit agent"))
        .issuer_name(ca_cert.subject)
        .public_key(srv_key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(now - datetime.timedelta(minutes=5))
        .not_valid_after(now + datetime.timedelta(days=365))
        .add_extension(x509.SubjectAlternativeName(sans), critical=False)
        .sign(ca_key, hashes.SHA256())
    )

    paths = {
        "ca": str(directory / "ca.pem"),
        "cert": str(directory / "server.pem"),
        "key": str(directory / "server.key"),
    }
    Path(paths["ca"]).write_bytes(ca_cert.public_bytes(serialization.Encoding.PEM))
    Path(paths["cert"]).write_bytes(srv_cert.public_bytes(serialization.Encoding.PEM))
    Path(paths["key"]).write_bytes(
        srv_key.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption(),
        )
    )
    os.chmod(paths["key"], 0o600)
    return paths


# ---------------------------------------------------------------- SSH ----


def make_host_key(path: str | Path) -> str:
    """Generate an RSA-3072 host key (PEM, private) at path."""
    key = rsa.generate_private_key(public_exponent=65537, key_size=3072)
    pem = key.private_bytes(
        serialization.Encoding.PEM,
        serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption(),
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(pem)
    os.chmod(path, 0o600)
    return str(path)


def load_host_key(path: str | Path) -> rsa.RSAPrivateKey:
    try:
        key = serialization.load_pem_private_key(Path(path).read_bytes(), password=None)
    except (OSError, ValueError) as e:
        raise CredentialError(f"cannot load host key {path}: {e}") from e
    if not isinstance(key, rsa.RSAPrivateKey):
        raise CredentialError(f"host key {path} is not RSA")
    return key


def host_public_pem(key: rsa.RSAPrivateKey) -> bytes:
    return key.public_key().public_bytes(
        serialization.Encoding.PEM, serialization.PublicFormat.SubjectPublicKeyInfo
    )


def write_host_public(key: rsa.RSAPrivateKey, path: str | Path) -> str:
    Path(path).write_bytes(host_public_pem(key))
    return str(path)


def load_host_public(path: str | Path) -> bytes:
    """Expected host public key, PEM bytes, as pinned by clients."""
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise CredentialError(f"cannot load host public key {path}: {e}") from e


def make_client_key(path: str | Path, comment: str = "srv6kit") -> tuple[str, str]:
    """Generate an Ed25519 client key pair; returns (private_path, public_path)."""
    priv = Ed25519PrivateKey.generate()
    raw_priv = priv.private_bytes(
        serialization.Encoding.Raw,
        serialization.PrivateFormat.Raw,
        serialization.NoEncryption(),
    )
    raw_pub = priv.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pub_path = path.with_suffix(".pub")
    path.write_text(f"ed25519-priv {base64.b64encode(raw_priv).decode()} {comment}\n")
    os.chmod(path, 0o600)
    pub_path.write_text(f"ed25519 {base64.b64encode(raw_pub).decode()} {comment}\n")
    return (str(path), str(pub_path))


def _parse_key_line(line: str, kind: str) -> bytes:
    toks = line.split()
    if len(toks) < 2 or toks[0] != kind:
        raise CredentialError(f"bad {kind} key line: {line!r}")
    try:
        raw = base64.b64decode(toks[1], validate=True)
    except ValueError as e:
        raise CredentialError(f"bad {kind} key encoding: {e}") from e
    if len(raw) != 32:
        raise CredentialError(f"{kind} key must be 32 raw bytes")
    return raw


def load_client_key(path: str | Path) -> Ed25519PrivateKey:
    try:
        line = Path(path).read_text().strip()
    except OSError as e:
        raise CredentialError(f"cannot load client key {path}: {e}") from e
    return Ed25519PrivateKey.from_private_bytes(_parse_key_line(line, "ed25519-priv"))


def load_authorized_keys(path: str | Path) -> list[bytes]:
    """Raw 32-byte Ed25519 public keys accepted for client auth."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise CredentialError(f"cannot load authorized keys {path}: {e}") from e
    keys = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        keys.append(_parse_key_line(line, "ed25519"))
    return keys


def public_raw(key: Ed25519PrivateKey) -> bytes:
    return key.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )


def verify_ed25519(pub_raw: bytes, signature: bytes, message: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(pub_raw).verify(signature, message)
        return True
    except Exception:
        return False


@dataclass(frozen=True)
class CredentialBundle:
    """Paths to everything an agent plus its clients need."""

    tls_ca: str
    tls_cert: str
    tls_key: str
    ssh_host_key: str
    ssh_host_pub: str
    ssh_client_key: str
    authorized_keys: str


def make_bundle(directory: str | Path) -> CredentialBundle:
    """Generate a full credential set under directory."""
    directory = Path(directory)
    tls = make_tls_material(directory / "tls")
    host_key_path = make_host_key(directory / "ssh" / "host_key.pem")
    host_pub_path = write_host_public(
        load_host_key(host_key_path), directory / "ssh" / "host_key.pub.pem"
    )
    client_priv, client_pub = make_client_key(directory / "ssh" / "client_key")
    auth_path = directory / "ssh" / "authorized_keys"
    auth_path.write_text(Path(client_pub).read_text())
    return CredentialBundle(
        tls_ca=tls["ca"],
        tls_cert=tls["cert"],
        tls_key=tls["key"],
        ssh_host_key=host_key_path,
        ssh_host_pub=host_pub_path,
        ssh_client_key=client_priv,
        authorized_keys=str(auth_path),
    )
