from setuptools import find_packages, setup

# Define package metadata
NAME = "mvcat"
VERSION = "0.1.0"
DESCRIPTION = "Penalized likelihood regression for multivariate categorical responses"
AUTHOR = "Golan Trevize"
EMAIL = "gtrevize66@protonmail.com"
URL = "https://github.com/gtrevize/mvcat.git"

# Specify package requirements
INSTALL_REQUIRES = [
    "numpy>=1.24.0",
    "scipy>=1.10.0",
    "colorlog>=6.7.0",
    "python-dotenv>=1.0.0",
    "tabulate>=0.9.0",
    "pygments>=2.15.0",
    "rich>=13.0.0",
    "typing_extensions>=4.8.0",
]

# Locate and include all packages in the 'src' directory
PACKAGES = find_packages(where="src")
PACKAGE_DIR = {"": "src"}

# Define entry points, if applicable (e.g., console scripts)
ENTRY_POINTS = {
    "console_scripts": [
        "mvcat-cli = mvcat.cli:main",
    ],
}

# Create the setup configuration
setup(
    name=NAME,
    version=VERSION,
    description=DESCRIPTION,
    author=AUTHOR,
    author_email=EMAIL,
    url=URL,
    packages=PACKAGES,
    package_dir=PACKAGE_DIR,
    install_requires=INSTALL_REQUIRES,
    entry_points=ENTRY_POINTS,
    python_requires=">=3.10",
)
