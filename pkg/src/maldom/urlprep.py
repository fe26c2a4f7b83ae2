"""Structural preprocessing of URLs and domain names.

A raw URL is reduced to its host and path, and rendered with marker tokens::

    https://Example.COM/a?q=1   ->  [CLS] [DOMAIN] example.com [PATH] /a?q=1 [SEP]
    http://10.0.0.1/mal.exe     ->  [CLS] [IP] 10.0.0.1 [PATH] /mal.exe [SEP]
    example.com                 ->  [CLS] [DOMAIN] example.com [SEP]
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

CLS = "[CLS]"
SEP = "[SEP]"
DOMAIN = "[DOMAIN]"
PATH = "[PATH]"
IP = "[IP]"
IPV6 = "[IPv6]"

ASCII_WHITESPACE = " \t\n\r\f\v"

_SCHEME_RE = re.compile(r"^([A-Za-z][A-Za-z0-9+.\-]*)://")
_HOST_END_RE = re.compile(r"[/?#]")
_WHITESPACE_RE = re.compile(r"\s")
_HEX_GROUP_RE = re.compile(r"[0-9A-Fa-f]{1,4}")
_ASCII_DIGITS = frozenset("0123456789")
_PORT_RE = re.compile(r"(:[0-9]*)?\Z")
_TRAILING_PORT_RE = re.compile(r":[0-9]*\Z")

PREPROCESSED_RE = re.compile(
    r"^\[CLS\] (\[DOMAIN\]|\[IP\]|\[IPv6\]) \S+( \[PATH\] \S+)? \[SEP\]$"
)


class UrlError(ValueError):
    """Base class for inputs that cannot be preprocessed."""


class EmptyInput(UrlError):
    pass


class NoHost(UrlError):
    pass


class InvalidHost(UrlError):
    """Host contains whitespace, which the rendered format cannot carry."""


class HostKind(enum.Enum):
    DOMAIN = "domain"
    IPV4 = "ipv4"
    IPV6 = "ipv6"

    @property
    def marker(self) -> str:
        return _MARKERS[self]


_MARKERS = {HostKind.DOMAIN: DOMAIN, HostKind.IPV4: IP, HostKind.IPV6: IPV6}


@dataclass(frozen=True)
class Host:
    kind: HostKind
    text: str


@dataclass(frozen=True)
class UrlParts:
    scheme: str | None
    host: Host
    path: str


def is_ipv4(text: str) -> bool:
    parts = text.split(".")
    if len(parts) != 4:
        return False
    for part in parts:
        if not 1 <= len(part) <= 3 or not _ASCII_DIGITS.issuperset(part):
            return False
        if int(part) > 255:
            return False
    return True


def is_ipv6(text: str) -> bool:
    """Colon-hex IPv6 literal with at most one ``::`` compression."""
    if text.count("::") > 1:
        return False
    if "::" in text:
        head, tail = text.split("::")
        groups = head.split(":") if head else []
        groups += tail.split(":") if tail else []
        if len(groups) > 7:
            return False
    else:
        groups = text.split(":")
        if len(groups) != 8:
            return False
    return all(_HEX_GROUP_RE.fullmatch(g) for g in groups)


def classify_host(host_text: str) -> Host:
    """Decide whether a host is an IPv4/IPv6 literal or a domain name.

    Brackets around an IPv6 literal are removed. The returned text is
    lowercased; for IPv6 this only affects the hex digits.
    """
    if host_text.startswith("[") and host_text.endswith("]") and is_ipv6(host_text[1:-1]):
        return Host(HostKind.IPV6, host_text[1:-1].lower())
    if is_ipv4(host_text):
        return Host(HostKind.IPV4, host_text)
    if is_ipv6(host_text):
        return Host(HostKind.IPV6, host_text.lower())
    return Host(HostKind.DOMAIN, host_text.lower())


def _strip_port(hostport: str) -> str:
    if hostport.startswith("["):
        close = hostport.find("]")
        if close != -1 and is_ipv6(hostport[1:close]) and _PORT_RE.match(hostport[close + 1 :]):
            return hostport[: close + 1]
    if is_ipv6(hostport):
        # bare IPv6 literal, e.g. a domain-list entry "2001:db8::1"
        return hostport
    while m := _TRAILING_PORT_RE.search(hostport):
        hostport = hostport[: m.start()]
    return hostport


def encode_whitespace(text: str) -> str:
    """Percent-encode every whitespace character as its UTF-8 bytes."""
    return _WHITESPACE_RE.sub(
        lambda m: "".join(f"%{b:02X}" for b in m.group().encode("utf-8")), text
    )


def parse(raw: str) -> UrlParts:
    text = raw.strip(ASCII_WHITESPACE)
    if not text:
        raise EmptyInput("input is blank")

    scheme = None
    m = _SCHEME_RE.match(text)
    if m:
        scheme = m.group(1).lower()
        text = text[m.end() :]

    end = _HOST_END_RE.search(text)
    if end:
        authority, path = text[: end.start()], text[end.start() :]
        if not path.startswith("/"):
            path = "/" + path
    else:
        authority, path = text, ""

    hostport = authority.rpartition("@")[2]
    host_text = _strip_port(hostport)
    if not host_text:
        raise NoHost(f"no host in {raw!r}")
    if _WHITESPACE_RE.search(host_text):
        raise InvalidHost(f"whitespace in host of {raw!r}")

    return UrlParts(scheme=scheme, host=classify_host(host_text), path=encode_whitespace(path))


def render(parts: UrlParts) -> str:
    segments = [CLS, parts.host.kind.marker, parts.host.text]
    if parts.path:
        segments += [PATH, encode_whitespace(parts.path)]
    segments.append(SEP)
    return " ".join(segments)


def preprocess(raw: str) -> str:
    return render(parse(raw))
